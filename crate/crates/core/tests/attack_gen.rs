mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{oracle_mask_count, oracle_synthesize, reference_trace, values};
use proptest::prelude::*;
use tsesim::attack::{schedule_emissions, AttackSchedule, UseCase};
use tsesim::flow_cache::{CacheConfig, FlowCache};
use tsesim::io::replay_mask_count;

#[test]
fn trace_sizes_and_mask_counts() {
    let expected = [
        (UseCase::Dp, 17, 16),
        (UseCase::SpDp, 289, 257),
        (UseCase::SipSpDp, 9537, 8209),
    ];
    for (uc, packets, masks) in expected {
        let (acl, trace) = reference_trace(uc);
        assert_eq!(trace.len(), packets, "{uc}");
        let oracle = oracle_mask_count(&acl, &trace);
        assert_eq!(oracle, masks, "{uc}");
        assert_eq!(replay_mask_count(&acl, &trace), oracle, "{uc}");
    }
}

#[test]
fn dp_trace_yields_distinct_keys() {
    let (acl, trace) = reference_trace(UseCase::Dp);
    let keys: BTreeSet<_> = trace
        .packets
        .iter()
        .map(|h| acl.synthesize(h))
        .map(|m| (m.mask, m.key))
        .collect();
    assert_eq!(keys.len(), 17);
    let allowed: Vec<_> = trace
        .packets
        .iter()
        .filter(|h| oracle_synthesize(&acl, &values(&acl, h)).1 == tsesim::slowpath::Action::Allow)
        .collect();
    assert_eq!(allowed.len(), 1);
}

/// Subtables created in each whole second when the schedule is replayed
/// into an empty cache with no expiry.
fn creations_per_second(
    uc: UseCase,
    schedule: &AttackSchedule,
    horizon: f64,
) -> BTreeMap<u32, usize> {
    let (acl, trace) = reference_trace(uc);
    let mut cache = FlowCache::new(acl, CacheConfig::default());
    let mut out = BTreeMap::new();
    for e in schedule_emissions(&trace, schedule, horizon) {
        if cache
            .classify(&trace.packets[e.trace_index], e.t)
            .created_subtable
        {
            *out.entry(e.t.floor() as u32).or_insert(0) += 1;
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn emission_stream_is_deterministic(rate in 500u32..20_000, a in 1u32..12, s in 0u32..4) {
        let (_, trace) = reference_trace(UseCase::SpDp);
        let sch = AttackSchedule::tse21(rate as f64, a as f64, s as f64, 0.5);
        let one: Vec<_> = schedule_emissions(&trace, &sch, 20.0).collect();
        let two: Vec<_> = schedule_emissions(&trace, &sch, 20.0).collect();
        prop_assert_eq!(&one, &two);
        for w in one.windows(2) {
            prop_assert!(w[0].t <= w[1].t);
        }
        for e in &one {
            prop_assert!(sch.attacking_at(e.t));
        }
    }

    #[test]
    fn cloning_keeps_mask_production_per_second(k in 2u32..12) {
        let base = AttackSchedule::tse21(1000.0, 10.0, 2.0, 0.0);
        let cloned = AttackSchedule::tse21(1000.0 * k as f64, 10.0, 2.0, 0.0);
        prop_assert_eq!(cloned.clone_factor, k);
        prop_assert!((cloned.mgr() - base.mgr()).abs() < 1e-9);
        let horizon = 24.0;
        prop_assert_eq!(
            creations_per_second(UseCase::SipSpDp, &base, horizon),
            creations_per_second(UseCase::SipSpDp, &cloned, horizon)
        );
    }

    #[test]
    fn distinct_spacing_is_inverse_mgr(k in 1u32..13) {
        let (_, trace) = reference_trace(UseCase::SipSpDp);
        let rate = 1000.0 * k as f64;
        let sch = AttackSchedule::tse21(rate, 10.0, 2.0, 0.0);
        let firsts: Vec<f64> = schedule_emissions(&trace, &sch, 9.9)
            .filter(|e| e.first_copy)
            .map(|e| e.t)
            .collect();
        let spacing = 1.0 / sch.mgr();
        for w in firsts.windows(2) {
            prop_assert!((w[1] - w[0] - spacing).abs() < 1e-9);
        }
    }
}
