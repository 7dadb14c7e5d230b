//! Deterministic simulator of a software switch's tuple space search flow
//! cache and of tuple space explosion attacks against it.
//!
//! The pieces, bottom up:
//!
//! * [`header`]: field layouts, packed header values, masks and masked keys.
//! * [`slowpath`]: priority ACLs and megaflow synthesis.
//! * [`flow_cache`]: exact match cache plus ranked, expiring tuple space.
//! * [`attack`]: probe traces and attack emission schedules.
//! * [`engine`]: the discrete-time simulation, metrics and cache maps.
//! * [`io`]: file formats, scenarios and the command implementations.

pub mod attack;
pub mod engine;
pub mod flow_cache;
pub mod header;
pub mod io;
pub mod slowpath;
