//! Constant-rate attack at 1000 pps against one core: the victim collapses
//! while masks are being spawned, then resurges once ranking puts its
//! subtable back at the front.

use tsesim::attack::{benign_fill, build_trace, target_acl, AttackSchedule, UseCase};
use tsesim::engine::{run, SimConfig};
use tsesim::header::ipv4;
use tsesim::slowpath::Acl;

fn main() {
    let budget: f64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(tsesim::engine::DEFAULT_BUDGET_PER_CORE);
    let acl = target_acl(UseCase::SipSpDp, &Acl::simple_tse());
    let trace = build_trace(
        UseCase::SipSpDp,
        &acl,
        &benign_fill(acl.layout(), ipv4("10.0.0.2")),
    )
    .unwrap();
    let config = SimConfig {
        budget_per_core: budget,
        attacks: vec![AttackSchedule::tse1(1000.0, 20.0)],
        ..SimConfig::default()
    };
    let out = run(&config, &acl, &[trace]).unwrap();
    println!("second  fraction  victim_cost  subtables  attacker_demand  rank");
    for r in &out.series.records {
        println!(
            "{:>6}  {:>8.4}  {:>11.1}  {:>9}  {:>15.0}  {:?}->{:?}",
            r.time_s,
            r.goodput_fraction,
            r.victim_cost,
            r.subtables,
            r.attacker_demand,
            r.victim_rank_before_sort,
            r.victim_rank_after_sort
        );
    }
    print!("{}", out.metrics.to_text());
}
