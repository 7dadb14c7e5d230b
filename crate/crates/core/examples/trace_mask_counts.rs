//! Builds the three attack traces and counts the megaflow masks each one
//! spawns in an empty cache.

use tsesim::attack::{benign_fill, build_trace, target_acl, UseCase};
use tsesim::header::ipv4;
use tsesim::io::replay_mask_count;
use tsesim::slowpath::Acl;

fn main() {
    println!("use_case   packets  masks  batches");
    for uc in UseCase::ALL {
        let acl = target_acl(uc, &Acl::simple_tse());
        let trace = build_trace(uc, &acl, &benign_fill(acl.layout(), ipv4("10.0.0.2"))).unwrap();
        println!(
            "{:<9}  {:>7}  {:>5}  {:>7}",
            uc.to_string(),
            trace.len(),
            replay_mask_count(&acl, &trace),
            trace.batches()
        );
    }
}
