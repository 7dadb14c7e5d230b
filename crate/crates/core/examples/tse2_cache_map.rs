//! Attack/sleep duty cycles at 1000 pps and the cache map of each: which
//! 1000-mask batches are being spawned, cached, or expiring every second.
//!
//! `cargo run --example tse2_cache_map [conf]` with conf in 1..=4 (all by
//! default).

use tsesim::attack::{benign_fill, build_trace, target_acl, AttackSchedule, UseCase};
use tsesim::engine::{cache_map_csv, run, SimConfig};
use tsesim::header::ipv4;
use tsesim::io::render_cache_map;
use tsesim::slowpath::Acl;

fn main() {
    let only: Option<u32> = std::env::args().nth(1).and_then(|s| s.parse().ok());
    let acl = target_acl(UseCase::SipSpDp, &Acl::simple_tse());
    let trace = build_trace(
        UseCase::SipSpDp,
        &acl,
        &benign_fill(acl.layout(), ipv4("10.0.0.2")),
    )
    .unwrap();
    for k in 1..=4 {
        if only.is_some_and(|o| o != k) {
            continue;
        }
        let schedule = AttackSchedule::conf(k, 1000.0, 20.0).unwrap();
        let config = SimConfig {
            attacks: vec![schedule],
            ..SimConfig::default()
        };
        let out = run(&config, &acl, std::slice::from_ref(&trace)).unwrap();
        let steady: Vec<_> = out
            .series
            .records
            .iter()
            .filter(|r| r.time_s >= 30)
            .collect();
        let min_masks = steady.iter().map(|r| r.attack_masks).min().unwrap_or(0);
        let max_fraction = steady
            .iter()
            .map(|r| r.goodput_fraction)
            .fold(0.0, f64::max);
        println!(
            "Conf({k}): T_attack={}s T_sleep={}s",
            schedule.t_attack.unwrap(),
            schedule.t_sleep
        );
        print!("{}", out.metrics.to_text());
        println!(
            "steady state: min attack masks {min_masks}, max goodput fraction {max_fraction:.4}"
        );
        let fr: Vec<String> = out
            .series
            .records
            .iter()
            .skip(18)
            .map(|r| format!("{:.3}", r.goodput_fraction))
            .collect();
        println!("fractions from 18 s: {}", fr.join(" "));
        println!("{}", render_cache_map(&cache_map_csv(&out.frames)).unwrap());
    }
}
