//! Probe traces against whitelist ACLs and timed attack emission.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::header::{ipv4, HeaderValue, Layout, DPORT, IP_SRC, SPORT};
use crate::slowpath::{Acl, Action};

/// Masks per cache-map batch, and packets per trace chunk.
pub const BATCH_SIZE: usize = 1000;

/// Peak rate above which an attack no longer counts as low-rate.
pub const LOW_RATE_PPS: f64 = 15_000.0;

/// 64 bytes of frame plus 20 bytes of preamble and inter-frame gap.
pub const WIRE_BYTES: u32 = 84;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UseCase {
    Dp,
    SpDp,
    SipSpDp,
}

impl UseCase {
    pub const ALL: [UseCase; 3] = [UseCase::Dp, UseCase::SpDp, UseCase::SipSpDp];

    /// Targeted fields of the five-tuple layout, in layout order.
    pub fn fields(self) -> &'static [usize] {
        match self {
            UseCase::Dp => &[DPORT],
            UseCase::SpDp => &[SPORT, DPORT],
            UseCase::SipSpDp => &[IP_SRC, SPORT, DPORT],
        }
    }
}

impl fmt::Display for UseCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UseCase::Dp => "dp",
            UseCase::SpDp => "sp_dp",
            UseCase::SipSpDp => "sip_sp_dp",
        })
    }
}

impl FromStr for UseCase {
    type Err = AttackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dp" => Ok(UseCase::Dp),
            "sp_dp" => Ok(UseCase::SpDp),
            "sip_sp_dp" => Ok(UseCase::SipSpDp),
            other => Err(AttackError::UnknownUseCase(other.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("unknown use case `{0}`")]
    UnknownUseCase(String),
    #[error("ACL has no single-field allow rule on `{0}`")]
    MissingAllowRule(String),
    #[error("trace is empty")]
    EmptyTrace,
}

/// The allow rule constraining exactly `field`, if any.
fn allow_value(acl: &Acl, field: usize) -> Option<u64> {
    acl.rules()
        .iter()
        .find_map(|r| match r.constraints.as_slice() {
            [(f, v)] if *f == field && r.action == Action::Allow => Some(*v),
            _ => None,
        })
}

/// The rules of `acl` a use case attacks: those constraining only targeted
/// fields, plus the catch-all.
pub fn target_acl(use_case: UseCase, acl: &Acl) -> Acl {
    let fields = use_case.fields();
    acl.restrict(|r| r.constraints.iter().all(|(f, _)| fields.contains(f)))
}

/// The exact value, then one value per bit position that first differs from
/// it there, MSB first; bits after the flip are copied from `allow_value`.
pub fn field_probe_values(width: u32, allow_value: u64) -> Vec<u64> {
    let mut out = Vec::with_capacity(width as usize + 1);
    out.push(allow_value);
    for i in 0..width {
        out.push(allow_value ^ (1u64 << (width - 1 - i)));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub packets: Vec<HeaderValue>,
    pub wire_bytes: u32,
}

impl Trace {
    pub fn new(packets: Vec<HeaderValue>) -> Self {
        Trace {
            packets,
            wire_bytes: WIRE_BYTES,
        }
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    /// Number of 1000-packet chunks, and so of cache-map batches.
    pub fn batches(&self) -> usize {
        self.len().div_ceil(BATCH_SIZE)
    }
}

/// Background values for untargeted fields: they match no allow rule of
/// the reference whitelist.
pub fn benign_fill(layout: &Layout, victim_ip: u64) -> HeaderValue {
    layout
        .header(&[ipv4("192.0.2.1"), victim_ip, 6, 40000, 443])
        .expect("five-tuple values fit")
}

/// Cross product of per-field probe lists, last targeted field fastest.
pub fn build_trace(use_case: UseCase, acl: &Acl, fill: &HeaderValue) -> Result<Trace, AttackError> {
    let layout = acl.layout();
    let mut lists = Vec::new();
    for &f in use_case.fields() {
        let name = || {
            layout
                .fields()
                .get(f)
                .map_or_else(|| format!("#{f}"), |s| s.name.clone())
        };
        if f >= layout.len() {
            return Err(AttackError::MissingAllowRule(name()));
        }
        let v = allow_value(acl, f).ok_or_else(|| AttackError::MissingAllowRule(name()))?;
        lists.push((f, field_probe_values(layout.width(f), v)));
    }
    let mut packets = vec![*fill];
    for (f, values) in &lists {
        packets = packets
            .iter()
            .flat_map(|h| {
                values
                    .iter()
                    .map(|&v| layout.with_field(h, *f, v).expect("fits"))
            })
            .collect();
    }
    Ok(Trace::new(packets))
}

/// `ceil(rate / 1000)`: copies sent per distinct trace packet.
pub fn clone_factor(rate_pps: f64) -> u32 {
    ((rate_pps / BATCH_SIZE as f64).ceil() as u32).max(1)
}

/// Distinct packets (and so new masks) per second of attack.
pub fn mask_generation_rate(rate_pps: f64, n: u32) -> f64 {
    rate_pps / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSchedule {
    pub rate: f64,
    /// Attack phase length; `None` attacks without pause.
    pub t_attack: Option<f64>,
    pub t_sleep: f64,
    pub clone_factor: u32,
    pub start: f64,
}

impl AttackSchedule {
    /// Constant-rate attack.
    pub fn tse1(rate: f64, start: f64) -> Self {
        AttackSchedule {
            rate,
            t_attack: None,
            t_sleep: 0.0,
            clone_factor: 1,
            start,
        }
    }

    /// Attack/sleep duty cycle.
    pub fn tse2(rate: f64, t_attack: f64, t_sleep: f64, start: f64) -> Self {
        AttackSchedule {
            rate,
            t_attack: Some(t_attack),
            t_sleep,
            clone_factor: 1,
            start,
        }
    }

    /// Duty cycle with each trace packet repeated `ceil(rate/1000)` times.
    pub fn tse21(rate: f64, t_attack: f64, t_sleep: f64, start: f64) -> Self {
        AttackSchedule {
            clone_factor: clone_factor(rate),
            ..Self::tse2(rate, t_attack, t_sleep, start)
        }
    }

    /// Reference duty cycles Conf(1)..Conf(4): 10/1, 10/2, 10/3 and 9/2 seconds.
    pub fn conf(k: u32, rate: f64, start: f64) -> Option<Self> {
        let (a, s) = match k {
            1 => (10.0, 1.0),
            2 => (10.0, 2.0),
            3 => (10.0, 3.0),
            4 => (9.0, 2.0),
            _ => return None,
        };
        Some(Self::tse2(rate, a, s, start))
    }

    pub fn period(&self) -> Option<f64> {
        self.t_attack.map(|a| a + self.t_sleep)
    }

    pub fn mgr(&self) -> f64 {
        mask_generation_rate(self.rate, self.clone_factor)
    }

    /// Emissions per attack phase (unbounded without a sleep phase).
    pub fn per_phase(&self) -> u64 {
        match self.t_attack {
            Some(a) => (a * self.rate - 1e-9).ceil().max(0.0) as u64,
            None => u64::MAX,
        }
    }

    /// Whether `t` lies inside an attack phase.
    pub fn attacking_at(&self, t: f64) -> bool {
        if t < self.start || self.rate <= 0.0 {
            return false;
        }
        match (self.t_attack, self.period()) {
            (Some(a), Some(p)) if p > 0.0 => (t - self.start) % p < a,
            _ => true,
        }
    }

    pub fn is_low_rate(&self) -> bool {
        self.rate <= LOW_RATE_PPS
    }

    /// Trace chunks an attack phase can reach.
    pub fn chunks_per_phase(&self, trace_batches: usize) -> usize {
        match self.t_attack {
            None => trace_batches,
            Some(_) => {
                let distinct = self.per_phase().div_ceil(self.clone_factor as u64);
                (distinct.div_ceil(BATCH_SIZE as u64) as usize).min(trace_batches)
            }
        }
    }
}

/// `(pps, bits/s)` averaged over a whole attack/sleep period.
pub fn average_rate(schedule: &AttackSchedule, wire_bytes: u32) -> (f64, f64) {
    let pps = match schedule.t_attack {
        Some(a) if a + schedule.t_sleep > 0.0 => schedule.rate * a / (a + schedule.t_sleep),
        _ => schedule.rate,
    };
    (pps, pps * wire_bytes as f64 * 8.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Emission {
    pub t: f64,
    pub trace_index: usize,
    /// 1000-packet chunk of the phase this packet belongs to, wrapped to
    /// the trace's batch count.
    pub chunk: usize,
    pub first_copy: bool,
}

/// Lazily produced, time-ordered attacker packets.
#[derive(Debug, Clone)]
pub struct EmissionStream {
    schedule: AttackSchedule,
    trace_len: usize,
    batches: usize,
    horizon: f64,
    phase: u64,
    j: u64,
    global: u64,
    distinct_in_phase: u64,
    chunk: usize,
}

/// Packets of `trace` sent under `schedule` with `t < horizon`. The trace
/// position carries over sleeps and wraps around at the end.
pub fn schedule_emissions(
    trace: &Trace,
    schedule: &AttackSchedule,
    horizon: f64,
) -> EmissionStream {
    EmissionStream {
        schedule: *schedule,
        trace_len: trace.len(),
        batches: trace.batches().max(1),
        horizon,
        phase: 0,
        j: 0,
        global: 0,
        distinct_in_phase: 0,
        chunk: 0,
    }
}

impl Iterator for EmissionStream {
    type Item = Emission;

    fn next(&mut self) -> Option<Emission> {
        let s = &self.schedule;
        if self.trace_len == 0 || s.rate <= 0.0 {
            return None;
        }
        if self.j >= s.per_phase() {
            self.phase += 1;
            self.j = 0;
            self.distinct_in_phase = 0;
        }
        let phase_start = s.start + self.phase as f64 * s.period().unwrap_or(0.0);
        let t = phase_start + self.j as f64 / s.rate;
        if t >= self.horizon {
            return None;
        }
        let n = s.clone_factor.max(1) as u64;
        let first_copy = self.global.is_multiple_of(n);
        if first_copy {
            self.chunk = (self.distinct_in_phase as usize / BATCH_SIZE) % self.batches;
            self.distinct_in_phase += 1;
        }
        let e = Emission {
            t,
            trace_index: ((self.global / n) % self.trace_len as u64) as usize,
            chunk: self.chunk,
            first_copy,
        };
        self.j += 1;
        self.global += 1;
        Some(e)
    }
}
