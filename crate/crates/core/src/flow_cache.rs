//! Two-layer flow cache: a direct-mapped exact match cache in front of a
//! megaflow cache organized as a tuple space.
//!
//! The tuple space is searched sequentially in rank order. Lookup cost is
//! reported as the number of subtables a linear search would probe; the
//! cache computes that number without scanning (see [`FlowCache::mfc_lookup`])
//! and keeps [`FlowCache::lookup_linear`] as the reference.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::header::{apply_mask, masked_key, HeaderMask, HeaderValue, Layout, MaskedKey};
use crate::slowpath::{Acl, Action};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    pub c_emc: f64,
    pub c_sub: f64,
    pub c_slow: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            c_emc: 1.0,
            c_sub: 1.0,
            c_slow: 50.0,
        }
    }
}

impl CostModel {
    pub fn cost(&self, emc_probes: u32, subtables_probed: usize, slow: bool) -> f64 {
        emc_probes as f64 * self.c_emc
            + subtables_probed as f64 * self.c_sub
            + if slow { self.c_slow } else { 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CacheConfig {
    pub emc_enabled: bool,
    pub emc_capacity: usize,
    /// Seconds without a hit after which a megaflow is removed.
    pub idle_timeout: f64,
    pub sort_interval_ms: u64,
    pub costs: CostModel,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            emc_enabled: false,
            emc_capacity: 8192,
            idle_timeout: 10.0,
            sort_interval_ms: 1000,
            costs: CostModel::default(),
        }
    }
}

/// FNV-1a over the 16 big-endian bytes of the packed header.
pub fn header_hash(h: &HeaderValue) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in h.bits().to_be_bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[derive(Debug, Clone)]
pub struct EmcCache {
    enabled: bool,
    slots: Vec<Option<(HeaderValue, Action)>>,
    occupied: usize,
}

impl EmcCache {
    pub fn new(capacity: usize, enabled: bool) -> Self {
        EmcCache {
            enabled,
            slots: vec![None; capacity.max(1)],
            occupied: 0,
        }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn occupancy(&self) -> usize {
        self.occupied
    }

    fn slot(&self, h: &HeaderValue) -> usize {
        (header_hash(h) % self.slots.len() as u64) as usize
    }

    pub fn lookup(&self, h: &HeaderValue) -> Option<Action> {
        if !self.enabled {
            return None;
        }
        match &self.slots[self.slot(h)] {
            Some((stored, action)) if stored == h => Some(*action),
            _ => None,
        }
    }

    pub fn insert(&mut self, h: &HeaderValue, action: Action) {
        if !self.enabled {
            return;
        }
        let i = self.slot(h);
        if self.slots[i].is_none() {
            self.occupied += 1;
        }
        self.slots[i] = Some((*h, action));
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MegaflowEntry {
    pub key: MaskedKey,
    pub action: Action,
    pub last_hit: f64,
    /// Inserted directly rather than by a slow-path miss.
    pub external: bool,
}

#[derive(Debug, Clone)]
pub struct Subtable {
    pub mask: HeaderMask,
    pub entries: HashMap<u128, MegaflowEntry>,
    pub interval_hits: u64,
    pub created_at: f64,
    // Lower bound on the entries' last_hit, to skip idle scans.
    oldest: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Path {
    EmcHit,
    MfcHit,
    SlowPath,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyResult {
    pub action: Action,
    pub path: Path,
    pub emc_probes: u32,
    pub subtables_probed: usize,
    pub cost_units: f64,
    /// Mask of the megaflow that was hit or created (none on an EMC hit).
    pub mask: Option<HeaderMask>,
    pub created_subtable: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExpireReport {
    pub removed_entries: usize,
    /// Removed subtables with the latest last_hit among their entries.
    pub removed_subtables: Vec<(HeaderMask, f64)>,
}

/// Counts live slots; index of a slot = live slots strictly above it.
#[derive(Debug, Clone)]
struct Fenwick {
    tree: Vec<i32>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick {
            tree: vec![0; n + 1],
        }
    }

    fn capacity(&self) -> usize {
        self.tree.len() - 1
    }

    fn add(&mut self, slot: usize, d: i32) {
        let mut i = slot + 1;
        while i < self.tree.len() {
            self.tree[i] += d;
            i += i & i.wrapping_neg();
        }
    }

    /// Live count in slots `0..n`.
    fn prefix(&self, n: usize) -> usize {
        let mut i = n;
        let mut s = 0i32;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s as usize
    }
}

/// Exact match cache, tuple space, and the slow path behind them.
///
/// Subtables live in slots; a higher slot is probed earlier, so a new
/// subtable is appended and lands at search index 0.
#[derive(Debug, Clone)]
pub struct FlowCache {
    acl: Acl,
    config: CacheConfig,
    emc: EmcCache,
    slots: Vec<Option<Subtable>>,
    by_mask: HashMap<u128, usize>,
    live: Fenwick,
    n_live: usize,
    n_entries: usize,
    externals: Vec<(u128, u128)>,
}

impl FlowCache {
    pub fn new(acl: Acl, config: CacheConfig) -> Self {
        let emc = EmcCache::new(config.emc_capacity, config.emc_enabled);
        FlowCache {
            acl,
            config,
            emc,
            slots: Vec::new(),
            by_mask: HashMap::new(),
            live: Fenwick::new(64),
            n_live: 0,
            n_entries: 0,
            externals: Vec::new(),
        }
    }

    pub fn acl(&self) -> &Acl {
        &self.acl
    }

    pub fn layout(&self) -> &Layout {
        self.acl.layout()
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn emc(&self) -> &EmcCache {
        &self.emc
    }

    pub fn subtable_count(&self) -> usize {
        self.n_live
    }

    pub fn entry_count(&self) -> usize {
        self.n_entries
    }

    pub fn emc_lookup(&self, h: &HeaderValue) -> Option<Action> {
        self.emc.lookup(h)
    }

    pub fn emc_insert(&mut self, h: &HeaderValue, action: Action) {
        self.emc.insert(h, action)
    }

    fn index_of_slot(&self, slot: usize) -> usize {
        self.n_live - self.live.prefix(slot + 1)
    }

    /// Search index of the subtable with this mask.
    pub fn search_index(&self, mask: &HeaderMask) -> Option<usize> {
        self.by_mask
            .get(&mask.bits())
            .map(|&s| self.index_of_slot(s))
    }

    /// Subtables in search order.
    pub fn subtables(&self) -> impl Iterator<Item = &Subtable> {
        self.slots.iter().rev().flatten()
    }

    pub fn subtable(&self, mask: &HeaderMask) -> Option<&Subtable> {
        self.by_mask
            .get(&mask.bits())
            .and_then(|&s| self.slots[s].as_ref())
    }

    /// Every `(mask, entry)` pair, in search order.
    pub fn entries(&self) -> Vec<(HeaderMask, MegaflowEntry)> {
        let mut out = Vec::with_capacity(self.n_entries);
        for st in self.subtables() {
            let mut es: Vec<_> = st.entries.values().copied().collect();
            es.sort_by_key(|e| e.key.bits());
            out.extend(es.into_iter().map(|e| (st.mask, e)));
        }
        out
    }

    /// Matching `(slot, key bits)` that a sequential search would find first.
    fn find(&self, h: &HeaderValue) -> Option<(usize, u128)> {
        let mut best: Option<(usize, u128)> = None;
        let mf = self.acl.synthesize(h);
        if let Some(&slot) = self.by_mask.get(&mf.mask.bits()) {
            let st = self.slots[slot].as_ref().expect("mapped slot is live");
            if st.entries.contains_key(&mf.key.bits()) {
                best = Some((slot, mf.key.bits()));
            }
        }
        for &(m, k) in &self.externals {
            if h.bits() & m == k {
                let slot = self.by_mask[&m];
                if best.is_none_or(|(b, _)| slot > b) {
                    best = Some((slot, k));
                }
            }
        }
        best
    }

    /// Mask of the subtable a lookup of `h` would hit.
    pub fn lookup_mask(&self, h: &HeaderValue) -> Option<HeaderMask> {
        self.find(h)
            .map(|(slot, _)| self.slots[slot].as_ref().expect("live").mask)
    }

    /// Sequential probe in search order; the reference for
    /// [`FlowCache::mfc_lookup`]. Returns (action, probed, mask).
    pub fn lookup_linear(&self, h: &HeaderValue) -> Option<(Action, usize, HeaderMask)> {
        for (i, st) in self.subtables().enumerate() {
            let k = h.bits() & st.mask.bits();
            if let Some(e) = st.entries.get(&k) {
                return Some((e.action, i + 1, st.mask));
            }
        }
        None
    }

    /// Probes the tuple space; on a hit credits the subtable and the entry.
    pub fn mfc_lookup(&mut self, h: &HeaderValue, now: f64) -> Option<(Action, usize)> {
        let (slot, key) = self.find(h)?;
        let probed = self.index_of_slot(slot) + 1;
        let st = self.slots[slot].as_mut().expect("live");
        st.interval_hits += 1;
        let e = st.entries.get_mut(&key).expect("found");
        e.last_hit = now;
        Some((e.action, probed))
    }

    /// Cost of classifying `h` right now, without changing any state.
    pub fn peek(&self, h: &HeaderValue) -> ClassifyResult {
        let costs = self.config.costs;
        let emc_probes = u32::from(self.emc.enabled());
        if let Some(action) = self.emc.lookup(h) {
            return ClassifyResult {
                action,
                path: Path::EmcHit,
                emc_probes,
                subtables_probed: 0,
                cost_units: costs.cost(emc_probes, 0, false),
                mask: None,
                created_subtable: false,
            };
        }
        match self.find(h) {
            Some((slot, key)) => {
                let st = self.slots[slot].as_ref().expect("live");
                let probed = self.index_of_slot(slot) + 1;
                ClassifyResult {
                    action: st.entries[&key].action,
                    path: Path::MfcHit,
                    emc_probes,
                    subtables_probed: probed,
                    cost_units: costs.cost(emc_probes, probed, false),
                    mask: Some(st.mask),
                    created_subtable: false,
                }
            }
            None => {
                let mf = self.acl.synthesize(h);
                ClassifyResult {
                    action: mf.action,
                    path: Path::SlowPath,
                    emc_probes,
                    subtables_probed: self.n_live,
                    cost_units: costs.cost(emc_probes, self.n_live, true),
                    mask: Some(mf.mask),
                    created_subtable: !self.by_mask.contains_key(&mf.mask.bits()),
                }
            }
        }
    }

    /// Adds hits for `packets` packets of an already cached flow.
    /// Returns false if no megaflow covers `h`.
    pub fn credit(&mut self, h: &HeaderValue, packets: u64, now: f64) -> bool {
        match self.find(h) {
            Some((slot, key)) => {
                let st = self.slots[slot].as_mut().expect("live");
                st.interval_hits += packets;
                st.entries.get_mut(&key).expect("found").last_hit = now;
                true
            }
            None => false,
        }
    }

    /// Installs an arbitrary megaflow. Returns true if a subtable was created.
    pub fn mfc_insert(
        &mut self,
        key: &MaskedKey,
        mask: &HeaderMask,
        action: Action,
        now: f64,
    ) -> bool {
        self.insert(*key, *mask, action, now, true)
    }

    fn insert(
        &mut self,
        key: MaskedKey,
        mask: HeaderMask,
        action: Action,
        now: f64,
        external: bool,
    ) -> bool {
        debug_assert!(masked_key(&key.as_header(), &mask).is_ok());
        let mut created = false;
        let slot = match self.by_mask.get(&mask.bits()) {
            Some(&s) => s,
            None => {
                created = true;
                self.new_slot(mask, now)
            }
        };
        let st = self.slots[slot].as_mut().expect("live");
        match st.entries.get_mut(&key.bits()) {
            Some(e) => {
                e.last_hit = now;
                if external && !e.external {
                    e.external = true;
                    self.externals.push((mask.bits(), key.bits()));
                }
            }
            None => {
                st.entries.insert(
                    key.bits(),
                    MegaflowEntry {
                        key,
                        action,
                        last_hit: now,
                        external,
                    },
                );
                st.oldest = st.oldest.min(now);
                self.n_entries += 1;
                if external {
                    self.externals.push((mask.bits(), key.bits()));
                }
            }
        }
        created
    }

    fn new_slot(&mut self, mask: HeaderMask, now: f64) -> usize {
        if self.slots.len() == self.live.capacity() {
            self.rebuild(None);
        }
        let slot = self.slots.len();
        self.slots.push(Some(Subtable {
            mask,
            entries: HashMap::new(),
            interval_hits: 0,
            created_at: now,
            oldest: now,
        }));
        self.by_mask.insert(mask.bits(), slot);
        self.live.add(slot, 1);
        self.n_live += 1;
        slot
    }

    /// Re-packs live subtables into slots `0..n`, in the given search order
    /// (or the current one), and sizes the index for growth.
    fn rebuild(&mut self, order: Option<Vec<Subtable>>) {
        let mut in_order: Vec<Subtable> = match order {
            Some(o) => o,
            None => self.slots.drain(..).rev().flatten().collect(),
        };
        in_order.reverse();
        let cap = (in_order.len() * 2).max(64);
        self.live = Fenwick::new(cap);
        self.by_mask.clear();
        self.slots = Vec::with_capacity(cap);
        for (slot, st) in in_order.into_iter().enumerate() {
            self.by_mask.insert(st.mask.bits(), slot);
            self.live.add(slot, 1);
            self.slots.push(Some(st));
        }
        self.n_live = self.slots.len();
    }

    /// EMC, then tuple space, then slow path with installation.
    pub fn classify(&mut self, h: &HeaderValue, now: f64) -> ClassifyResult {
        let costs = self.config.costs;
        let emc_probes = u32::from(self.emc.enabled());
        if let Some(action) = self.emc.lookup(h) {
            return ClassifyResult {
                action,
                path: Path::EmcHit,
                emc_probes,
                subtables_probed: 0,
                cost_units: costs.cost(emc_probes, 0, false),
                mask: None,
                created_subtable: false,
            };
        }
        if let Some((slot, key)) = self.find(h) {
            let probed = self.index_of_slot(slot) + 1;
            let st = self.slots[slot].as_mut().expect("live");
            st.interval_hits += 1;
            let e = st.entries.get_mut(&key).expect("found");
            e.last_hit = now;
            let (action, mask) = (e.action, st.mask);
            self.emc.insert(h, action);
            return ClassifyResult {
                action,
                path: Path::MfcHit,
                emc_probes,
                subtables_probed: probed,
                cost_units: costs.cost(emc_probes, probed, false),
                mask: Some(mask),
                created_subtable: false,
            };
        }
        let probed = self.n_live;
        let mf = self.acl.synthesize(h);
        let created = self.insert(mf.key, mf.mask, mf.action, now, false);
        self.emc.insert(h, mf.action);
        ClassifyResult {
            action: mf.action,
            path: Path::SlowPath,
            emc_probes,
            subtables_probed: probed,
            cost_units: costs.cost(emc_probes, probed, true),
            mask: Some(mf.mask),
            created_subtable: created,
        }
    }

    /// Removes megaflows idle for at least the idle timeout, and any
    /// subtable left empty.
    pub fn expire(&mut self, now: f64) -> ExpireReport {
        let timeout = self.config.idle_timeout;
        let mut report = ExpireReport::default();
        let mut gone_externals = false;
        for slot in 0..self.slots.len() {
            let Some(st) = self.slots[slot].as_mut() else {
                continue;
            };
            if now - st.oldest < timeout {
                continue;
            }
            let mut latest = f64::NEG_INFINITY;
            let before = st.entries.len();
            st.entries.retain(|_, e| {
                latest = latest.max(e.last_hit);
                if now - e.last_hit >= timeout {
                    gone_externals |= e.external;
                    false
                } else {
                    true
                }
            });
            st.oldest = st
                .entries
                .values()
                .map(|e| e.last_hit)
                .fold(f64::INFINITY, f64::min);
            let removed = before - st.entries.len();
            report.removed_entries += removed;
            self.n_entries -= removed;
            if st.entries.is_empty() {
                let mask = st.mask;
                report.removed_subtables.push((mask, latest));
                self.slots[slot] = None;
                self.by_mask.remove(&mask.bits());
                self.live.add(slot, -1);
                self.n_live -= 1;
            }
        }
        if gone_externals {
            let slots = &self.slots;
            let by_mask = &self.by_mask;
            self.externals.retain(|(m, k)| {
                by_mask
                    .get(m)
                    .and_then(|&s| slots[s].as_ref())
                    .is_some_and(|st| st.entries.contains_key(k))
            });
        }
        let tombstones = self.slots.len() - self.n_live;
        if tombstones > 1024 && tombstones > self.n_live {
            self.rebuild(None);
        }
        report
    }

    /// Stable sort by interval hits, descending, then resets the counters.
    /// Returns each subtable's mask and pre-reset hits in the new order.
    pub fn rebalance(&mut self, _now: f64) -> Vec<(HeaderMask, u64)> {
        let mut order: Vec<Subtable> = self.slots.drain(..).rev().flatten().collect();
        order.sort_by(|a, b| b.interval_hits.cmp(&a.interval_hits));
        let ranked = order.iter().map(|st| (st.mask, st.interval_hits)).collect();
        for st in &mut order {
            st.interval_hits = 0;
        }
        self.rebuild(Some(order));
        ranked
    }

    /// One line per subtable in search order:
    /// `#<index> mask=<hex per field> entries=<n> hits=<interval hits>`.
    pub fn snapshot(&self) -> String {
        let layout = self.layout();
        let mut out = String::new();
        for (i, st) in self.subtables().enumerate() {
            out.push_str(&format!(
                "#{i} mask={} entries={} hits={}\n",
                layout.mask_hex(&st.mask),
                st.entries.len(),
                st.interval_hits
            ));
        }
        out
    }
}

/// Builds the masked key for a header under a mask of the same layout.
pub fn key_for(h: &HeaderValue, m: &HeaderMask) -> MaskedKey {
    apply_mask(h, m).expect("same layout")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::header::Layout;

    fn hyp(v: u64) -> HeaderValue {
        Layout::hyp().header(&[v]).unwrap()
    }

    fn hmask(v: u64) -> HeaderMask {
        Layout::hyp().mask(&[v]).unwrap()
    }

    fn hyp_cache() -> FlowCache {
        let mut c = FlowCache::new(Acl::hyp(), CacheConfig::default());
        // Rows #1 and #4 share mask 111; search order ends up [111, 100, 110].
        for (k, m, a) in [
            (0b010, 0b110, Action::Deny),
            (0b100, 0b100, Action::Deny),
            (0b001, 0b111, Action::Allow),
            (0b000, 0b111, Action::Deny),
        ] {
            c.mfc_insert(&key_for(&hyp(k), &hmask(m)), &hmask(m), a, 0.0);
        }
        c
    }

    #[test]
    fn emc_read_your_write() {
        let mut e = EmcCache::new(8192, true);
        let l = Layout::five_tuple();
        let h = l.header(&[1, 2, 6, 3, 4]).unwrap();
        e.insert(&h, Action::Allow);
        assert_eq!(e.lookup(&h), Some(Action::Allow));
        let h2 = l.header(&[1, 2, 6, 3, 5]).unwrap();
        assert_eq!(e.lookup(&h2), None);
    }

    #[test]
    fn emc_collision_and_disabled() {
        let mut e = EmcCache::new(1, true);
        e.insert(&hyp(1), Action::Allow);
        e.insert(&hyp(2), Action::Deny);
        assert_eq!(e.lookup(&hyp(1)), None);
        assert_eq!(e.lookup(&hyp(2)), Some(Action::Deny));
        assert_eq!(e.occupancy(), 1);

        let mut off = EmcCache::new(8192, false);
        off.insert(&hyp(1), Action::Allow);
        assert_eq!(off.lookup(&hyp(1)), None);
        assert_eq!(off.occupancy(), 0);
    }

    #[test]
    fn hash_is_stable() {
        // FNV-1a of 16 zero bytes.
        let mut h: u64 = 0xcbf29ce484222325;
        for _ in 0..16 {
            h = h.wrapping_mul(0x100000001b3);
        }
        assert_eq!(header_hash(&hyp(0)), h);
    }

    #[test]
    fn hyp_lookups() {
        let mut c = hyp_cache();
        assert_eq!(c.mfc_lookup(&hyp(0b111), 1.0), Some((Action::Deny, 2)));
        assert_eq!(c.mfc_lookup(&hyp(0b000), 1.0), Some((Action::Deny, 1)));
        assert_eq!(c.mfc_lookup(&hyp(0b011), 1.0), Some((Action::Deny, 3)));
        assert_eq!(c.mfc_lookup(&hyp(0b001), 1.0), Some((Action::Allow, 1)));
        let mut empty = FlowCache::new(Acl::hyp(), CacheConfig::default());
        assert_eq!(empty.mfc_lookup(&hyp(0), 0.0), None);
        assert_eq!(empty.peek(&hyp(0)).subtables_probed, 0);
    }

    #[test]
    fn new_subtable_first() {
        let mut c = FlowCache::new(Acl::hyp(), CacheConfig::default());
        let (a, b) = (hmask(0b100), hmask(0b110));
        assert!(c.mfc_insert(&key_for(&hyp(0b100), &a), &a, Action::Deny, 0.0));
        assert_eq!(c.search_index(&a), Some(0));
        assert!(c.mfc_insert(&key_for(&hyp(0b010), &b), &b, Action::Deny, 0.0));
        assert_eq!(c.search_index(&b), Some(0));
        assert_eq!(c.search_index(&a), Some(1));
        assert!(!c.mfc_insert(&key_for(&hyp(0b000), &a), &a, Action::Deny, 0.0));
        assert_eq!(c.subtable_count(), 2);
        assert_eq!(c.entry_count(), 3);
    }

    #[test]
    fn duplicate_insert_refreshes() {
        let mut c = FlowCache::new(Acl::hyp(), CacheConfig::default());
        let m = hmask(0b100);
        c.mfc_insert(&key_for(&hyp(0b100), &m), &m, Action::Deny, 0.0);
        c.mfc_insert(&key_for(&hyp(0b100), &m), &m, Action::Deny, 5.0);
        assert_eq!(c.entry_count(), 1);
        assert_eq!(c.expire(10.0).removed_entries, 0);
        assert_eq!(c.expire(15.0).removed_entries, 1);
    }

    #[test]
    fn expiry_threshold() {
        let mut c = FlowCache::new(Acl::hyp(), CacheConfig::default());
        c.classify(&hyp(0b100), 0.0);
        assert_eq!(c.expire(9.9).removed_entries, 0);
        assert_eq!(c.subtable_count(), 1);
        let r = c.expire(10.0);
        assert_eq!(r.removed_entries, 1);
        assert_eq!(r.removed_subtables, vec![(hmask(0b100), 0.0)]);
        assert_eq!(c.subtable_count(), 0);
    }

    #[test]
    fn rebalance_orders_by_hits() {
        let mut c = FlowCache::new(Acl::hyp(), CacheConfig::default());
        let masks = [hmask(0b100), hmask(0b110), hmask(0b111)];
        let keys = [0b100, 0b010, 0b000];
        // Search order after inserts: C(111), B(110), A(100).
        for (m, k) in masks.iter().zip(keys) {
            c.mfc_insert(&key_for(&hyp(k), m), m, Action::Deny, 0.0);
        }
        let hits = [5u64, 100, 1];
        for (k, n) in keys.iter().zip(hits) {
            assert!(c.credit(&hyp(*k), n, 0.5));
        }
        let ranked = c.rebalance(1.0);
        assert_eq!(ranked, vec![(masks[1], 100), (masks[0], 5), (masks[2], 1)]);
        assert!(c.subtables().all(|s| s.interval_hits == 0));
        let again = c.rebalance(2.0);
        assert_eq!(
            again.iter().map(|r| r.0).collect::<Vec<_>>(),
            vec![masks[1], masks[0], masks[2]]
        );
    }

    #[test]
    fn classify_paths() {
        let mut c = FlowCache::new(
            Acl::hyp(),
            CacheConfig {
                emc_enabled: true,
                ..CacheConfig::default()
            },
        );
        let r = c.classify(&hyp(0b101), 0.0);
        assert_eq!(r.path, Path::SlowPath);
        assert_eq!(r.cost_units, 1.0 + 50.0);
        assert!(r.created_subtable);
        assert_eq!(c.entry_count(), 1);
        assert_eq!(c.classify(&hyp(0b101), 0.0).path, Path::EmcHit);
        let r = c.classify(&hyp(0b110), 0.0);
        assert_eq!(
            (r.path, r.subtables_probed, r.cost_units),
            (Path::MfcHit, 1, 2.0)
        );
    }

    #[test]
    fn hyp_sweep_builds_four_megaflows() {
        let mut c = FlowCache::new(Acl::hyp(), CacheConfig::default());
        for v in 0..8 {
            c.classify(&hyp(v), 0.0);
        }
        let mut rows: Vec<_> = c
            .entries()
            .into_iter()
            .map(|(m, e)| (e.key.bits(), m.bits(), e.action))
            .collect();
        rows.sort_by_key(|r| (r.0, r.1));
        assert_eq!(
            rows,
            vec![
                (0b000, 0b111, Action::Deny),
                (0b001, 0b111, Action::Allow),
                (0b010, 0b110, Action::Deny),
                (0b100, 0b100, Action::Deny),
            ]
        );
    }

    #[test]
    fn snapshot_format() {
        let c = hyp_cache();
        let snap = c.snapshot();
        let first = snap.lines().next().unwrap();
        assert_eq!(first, "#0 mask=7 entries=2 hits=0");
        assert_eq!(snap.lines().count(), 3);
    }

    #[test]
    fn peek_does_not_mutate() {
        let mut c = hyp_cache();
        let before = c.snapshot();
        let r = c.peek(&hyp(0b001));
        assert_eq!((r.path, r.subtables_probed), (Path::MfcHit, 1));
        assert_eq!(c.snapshot(), before);
        c.classify(&hyp(0b001), 0.0);
        assert_ne!(c.snapshot(), before);
    }

    #[test]
    fn growth_and_tombstones_keep_order() {
        let l = Layout::five_tuple();
        let acl = Acl::simple_tse();
        let mut c = FlowCache::new(acl, CacheConfig::default());
        for i in 0..500u64 {
            let m = l.mask(&[0, 0, 0, 0, 0xffff ^ i]).unwrap();
            let h = l.header(&[0, 0, 0, 0, 0]).unwrap();
            c.mfc_insert(&key_for(&h, &m), &m, Action::Deny, (i % 3) as f64);
        }
        assert_eq!(c.subtable_count(), 500);
        let last = l.mask(&[0, 0, 0, 0, 0xffff ^ 499]).unwrap();
        assert_eq!(c.search_index(&last), Some(0));
        c.expire(10.0);
        for (i, st) in c.subtables().enumerate() {
            assert_eq!(c.search_index(&st.mask), Some(i));
        }
        let h = l.header(&[0, 0, 0, 0, 0]).unwrap();
        assert_eq!(
            c.lookup_linear(&h).map(|r| r.1),
            Some(c.peek(&h).subtables_probed)
        );
    }
}
