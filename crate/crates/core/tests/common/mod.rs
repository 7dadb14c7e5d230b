//! Independent reference implementations used as test oracles. They work
//! on per-field integer vectors and bit-by-bit loops, sharing no code with
//! the library beyond reading field values out of a packed header.

#![allow(dead_code)]

use std::collections::BTreeSet;

use tsesim::attack::{benign_fill, build_trace, target_acl, Trace, UseCase};
use tsesim::header::{ipv4, HeaderValue};
use tsesim::slowpath::{Acl, Action};

/// Reference walk: returns the per-field mask, action and the set of
/// `(field, bit)` positions compared along the way.
pub fn oracle_synthesize(acl: &Acl, values: &[u64]) -> (Vec<u64>, Action, BTreeSet<(usize, u32)>) {
    let layout = acl.layout();
    let mut mask = vec![0u64; layout.len()];
    let mut examined = BTreeSet::new();
    for rule in acl.rules() {
        let mut all = true;
        let mut fields: Vec<_> = rule.constraints.clone();
        fields.sort();
        'fields: for (f, want) in fields {
            let w = layout.width(f);
            for bit in 0..w {
                let shift = w - 1 - bit;
                examined.insert((f, bit));
                mask[f] |= 1 << shift;
                if (values[f] >> shift) & 1 != (want >> shift) & 1 {
                    all = false;
                    break 'fields;
                }
            }
        }
        if all {
            return (mask, rule.action, examined);
        }
    }
    (mask, Action::Deny, examined)
}

/// First rule (by priority) whose exact fields all equal the header.
pub fn oracle_lookup(acl: &Acl, values: &[u64]) -> Action {
    acl.rules()
        .iter()
        .find(|r| r.constraints.iter().all(|&(f, v)| values[f] == v))
        .map_or(Action::Deny, |r| r.action)
}

/// Distinct reference masks over the trace.
pub fn oracle_mask_count(acl: &Acl, trace: &Trace) -> usize {
    let layout = acl.layout();
    trace
        .packets
        .iter()
        .map(|h| oracle_synthesize(acl, &layout.values(h)).0)
        .collect::<BTreeSet<_>>()
        .len()
}

/// Whether two (key, mask) pairs, given per field, admit a common header,
/// by enumeration of every header of a narrow layout.
pub fn oracle_overlap_enum(widths: &[u32], a: (&[u64], &[u64]), b: (&[u64], &[u64])) -> bool {
    let total: u32 = widths.iter().sum();
    assert!(total <= 16, "enumeration only for narrow layouts");
    (0u64..1 << total).any(|x| {
        let mut rest = x;
        let mut ok = true;
        for (f, &w) in widths.iter().enumerate().rev() {
            let v = rest & ((1 << w) - 1);
            rest >>= w;
            ok &= v & a.1[f] == a.0[f] && v & b.1[f] == b.0[f];
        }
        ok
    })
}

pub const VICTIM_IP: &str = "10.0.0.2";

pub fn reference_trace(use_case: UseCase) -> (Acl, Trace) {
    let acl = target_acl(use_case, &Acl::simple_tse());
    let trace = build_trace(use_case, &acl, &benign_fill(acl.layout(), ipv4(VICTIM_IP))).unwrap();
    (acl, trace)
}

pub fn values(acl: &Acl, h: &HeaderValue) -> Vec<u64> {
    acl.layout().values(h)
}
