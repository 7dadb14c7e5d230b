mod common;

use common::reference_trace;
use proptest::prelude::*;
use tsesim::attack::{AttackSchedule, UseCase};
use tsesim::engine::{allocate, run, BatchState, SimConfig, SimOutput};
use tsesim::io::attack_seconds;

fn tse1(duration: f64) -> SimOutput {
    let (acl, trace) = reference_trace(UseCase::SipSpDp);
    let config = SimConfig {
        duration,
        attacks: vec![AttackSchedule::tse1(1000.0, 20.0)],
        ..SimConfig::default()
    };
    run(&config, &acl, &[trace]).unwrap()
}

fn duty_cycle_fraction(cores: u32, rate: f64) -> f64 {
    let (acl, trace) = reference_trace(UseCase::SipSpDp);
    let schedule = AttackSchedule::tse21(rate, 10.0, 2.0, 0.0);
    let config = SimConfig {
        cores,
        duration: 40.0,
        attacks: vec![schedule],
        ..SimConfig::default()
    };
    let out = run(&config, &acl, &[trace]).unwrap();
    let secs = attack_seconds(&schedule, config.duration);
    out.series
        .mean_fraction_where(|s| secs.contains(&s))
        .unwrap()
}

proptest! {
    #[test]
    fn allocation_respects_budget_and_floor(budget in 0.0f64..1e7, att in 0.0f64..2e7,
                                            vic in 0.0f64..2e7, floor in 0.0f64..0.1) {
        let a = allocate(budget, att, vic, floor);
        prop_assert!(a.attacker_units + a.victim_units <= budget * (1.0 + 1e-12) + 1e-9);
        prop_assert!(a.attacker_units <= att + 1e-9);
        prop_assert!(a.victim_units <= vic + 1e-9);
        prop_assert!((0.0..=1.0).contains(&a.fraction));
        if vic > 0.0 && floor * vic <= budget {
            prop_assert!(a.victim_units >= floor * vic * (1.0 - 1e-12));
        }
        if att + vic <= budget {
            prop_assert!((a.fraction - 1.0).abs() < 1e-12 || vic == 0.0);
        }
    }
}

#[test]
fn runs_are_deterministic() {
    let a = tse1(40.0);
    let b = tse1(40.0);
    assert_eq!(a.series.to_csv(), b.series.to_csv());
    assert_eq!(a.frames, b.frames);
    assert_eq!(a.final_snapshot, b.final_snapshot);
}

#[test]
fn per_second_budget_is_conserved() {
    let out = tse1(40.0);
    for r in &out.series.records {
        assert!(
            r.attacker_units + r.victim_units <= r.budget_units * (1.0 + 1e-9),
            "second {}",
            r.time_s
        );
    }
}

#[test]
fn no_attack_keeps_full_goodput() {
    let (acl, trace) = reference_trace(UseCase::SipSpDp);
    let config = SimConfig {
        duration: 15.0,
        ..SimConfig::default()
    };
    let out = run(&config, &acl, &[trace]).unwrap();
    assert!(out.series.fractions().iter().all(|&f| f == 1.0));
    assert!(out.metrics.ttd.is_none());
}

#[test]
fn resurgence_comes_from_ranking() {
    let out = tse1(60.0);
    let m = out.metrics;
    let (ttd, ttr) = (m.ttd.unwrap(), m.ttr.unwrap());
    let rs = &out.series.records;
    let at = |t: f64| &rs[(20.0 + t) as usize];
    // ranking pulls the victim forward during the collapse
    assert!(rs[20..(20.0 + ttr) as usize + 1]
        .iter()
        .any(|r| r.victim_rank_before_sort > r.victim_rank_after_sort));
    assert!(at(ttr).victim_cost < at(ttd).victim_cost);
    assert!(at(ttr).victim_rank_before_sort < at(ttd).victim_rank_before_sort);
}

#[test]
fn goodput_grows_with_cores() {
    let fs: Vec<f64> = (1..=4).map(|c| duty_cycle_fraction(c, 3000.0)).collect();
    for w in fs.windows(2) {
        assert!(w[1] >= w[0] - 1e-9, "{fs:?}");
    }
}

#[test]
fn goodput_does_not_grow_with_rate() {
    let fs: Vec<f64> = [1000.0, 3000.0, 6000.0, 12000.0]
        .iter()
        .map(|&r| duty_cycle_fraction(2, r))
        .collect();
    for w in fs.windows(2) {
        assert!(w[1] <= w[0] + 1e-3, "{fs:?}");
    }
}

#[test]
fn duty_cycle_map_generates_one_batch_per_second() {
    let (acl, trace) = reference_trace(UseCase::SipSpDp);
    let schedule = AttackSchedule::conf(1, 1000.0, 0.0).unwrap();
    let config = SimConfig {
        duration: 45.0,
        attacks: vec![schedule],
        ..SimConfig::default()
    };
    let out = run(&config, &acl, &[trace]).unwrap();
    for f in &out.frames {
        let generating = f
            .batches
            .iter()
            .filter(|&&b| b == BatchState::Generating)
            .count();
        if schedule.attacking_at(f.second as f64) && schedule.attacking_at(f.second as f64 + 0.99) {
            assert_eq!(generating, 1, "second {}", f.second);
        } else if !schedule.attacking_at(f.second as f64) {
            assert_eq!(generating, 0, "second {}", f.second);
        }
    }
}
