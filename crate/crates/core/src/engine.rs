//! Discrete-time simulation of a victim flow pair sharing a flow cache with
//! attack traffic under a fixed processing budget.
//!
//! Time advances in ticks. Each tick classifies the attacker packets due in
//! it, prices the victim's packets at their current lookup cost, splits the
//! budget (attacker first, victim gets the rest above a small floor), credits
//! the victim's served packets to its subtables, and runs expiry. Ranking
//! runs on whole seconds, where a series record and a cache-map frame close.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{schedule_emissions, AttackSchedule, EmissionStream, Trace};
use crate::flow_cache::{key_for, CacheConfig, FlowCache};
use crate::header::{ipv4, HeaderMask, HeaderValue};
use crate::slowpath::{Acl, Action};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub cores: u32,
    /// Cost units one core processes per second.
    pub budget_per_core: f64,
    /// Victim packets per second offered.
    pub victim_offered: f64,
    pub victim_flow_count: usize,
    pub victim_src: String,
    pub victim_dst: String,
    pub tick: f64,
    pub duration: f64,
    pub seed: u64,
    /// Share of offered victim packets always served.
    pub victim_floor: f64,
    pub eps_down: f64,
    pub eps_up: f64,
    pub cache: CacheConfig,
    pub attacks: Vec<AttackSchedule>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            cores: 1,
            budget_per_core: DEFAULT_BUDGET_PER_CORE,
            victim_offered: 1e6,
            victim_flow_count: 2,
            victim_src: "10.0.0.1".into(),
            victim_dst: "10.0.0.2".into(),
            tick: 0.1,
            duration: 60.0,
            seed: 42,
            victim_floor: 1e-3,
            eps_down: 0.01,
            eps_up: 0.05,
            cache: CacheConfig::default(),
            attacks: Vec::new(),
        }
    }
}

/// Reference calibration of one core's processing budget.
pub const DEFAULT_BUDGET_PER_CORE: f64 = 7.4e6;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("cores must be at least 1")]
    NoCores,
    #[error("tick {0} does not divide one second")]
    BadTick(f64),
    #[error("duration {duration} ends before attack start {start}")]
    ShortDuration { duration: f64, start: f64 },
    #[error("attack schedule #{0} has no trace")]
    MissingTrace(usize),
    #[error("attack schedule #{0} is invalid: {1}")]
    BadSchedule(usize, String),
    #[error("bad victim address `{0}`")]
    BadAddress(String),
    #[error("{0} must be non-negative")]
    Negative(&'static str),
}

impl SimConfig {
    pub fn ticks_per_second(&self) -> Result<u32, EngineError> {
        if !(self.tick > 0.0) {
            return Err(EngineError::BadTick(self.tick));
        }
        let n = (1.0 / self.tick).round();
        if n < 1.0 || ((1.0 / n) - self.tick).abs() > 1e-9 {
            return Err(EngineError::BadTick(self.tick));
        }
        Ok(n as u32)
    }

    pub fn attack_start(&self) -> Option<f64> {
        self.attacks.iter().map(|a| a.start).reduce(f64::min)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.cores == 0 {
            return Err(EngineError::NoCores);
        }
        self.ticks_per_second()?;
        for (name, v) in [
            ("budget_per_core", self.budget_per_core),
            ("victim_offered", self.victim_offered),
            ("victim_floor", self.victim_floor),
            ("duration", self.duration),
        ] {
            if !(v >= 0.0) {
                return Err(EngineError::Negative(name));
            }
        }
        if let Some(start) = self.attack_start() {
            if self.duration < start {
                return Err(EngineError::ShortDuration {
                    duration: self.duration,
                    start,
                });
            }
        }
        for (i, a) in self.attacks.iter().enumerate() {
            let bad = |m: &str| Err(EngineError::BadSchedule(i, m.to_string()));
            if !(a.rate >= 0.0) {
                return bad("rate must be non-negative");
            }
            if !(a.t_sleep >= 0.0) {
                return bad("t_sleep must be non-negative");
            }
            if a.t_attack.is_some_and(|t| !(t > 0.0)) {
                return bad("t_attack must be positive");
            }
            if a.clone_factor == 0 {
                return bad("clone factor must be at least 1");
            }
        }
        for a in [&self.victim_src, &self.victim_dst] {
            if a.parse::<std::net::Ipv4Addr>().is_err() {
                return Err(EngineError::BadAddress(a.clone()));
            }
        }
        Ok(())
    }
}

/// Budget split of one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Allocation {
    pub fraction: f64,
    pub attacker_units: f64,
    pub victim_units: f64,
}

/// Attacker demand is served first; the victim keeps at least `floor` of
/// its demand and otherwise gets what is left.
pub fn allocate(budget: f64, attacker_demand: f64, victim_demand: f64, floor: f64) -> Allocation {
    if victim_demand <= 0.0 {
        return Allocation {
            fraction: 1.0,
            attacker_units: attacker_demand.min(budget),
            victim_units: 0.0,
        };
    }
    let reserved = (floor * victim_demand).min(budget);
    let attacker_units = attacker_demand.min(budget - reserved);
    let victim_units = (budget - attacker_units).min(victim_demand);
    Allocation {
        fraction: victim_units / victim_demand,
        attacker_units,
        victim_units,
    }
}

/// Victim share of its offered packets, with the default floor of 10⁻³.
pub fn compute_goodput_fraction(budget: f64, attacker_demand: f64, victim_demand: f64) -> f64 {
    allocate(budget, attacker_demand, victim_demand, 1e-3).fraction
}

/// Mean cost of one packet of each victim flow, without counting it.
pub fn victim_cost_probe(cache: &FlowCache, victims: &[HeaderValue]) -> f64 {
    if victims.is_empty() {
        return 0.0;
    }
    victims
        .iter()
        .map(|h| cache.peek(h).cost_units)
        .sum::<f64>()
        / victims.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondRecord {
    pub time_s: u32,
    pub goodput_fraction: f64,
    pub victim_cost: f64,
    pub attacker_pps: u64,
    pub subtables: usize,
    pub entries: usize,
    /// Megaflow masks created by attack packets and still cached.
    pub attack_masks: usize,
    /// Best search index among victim subtables, before and after the
    /// ranking that closes this second.
    pub victim_rank_before_sort: Option<usize>,
    pub victim_rank_after_sort: Option<usize>,
    pub budget_units: f64,
    pub attacker_units: f64,
    pub victim_units: f64,
    pub attacker_demand: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimSeries {
    pub records: Vec<SecondRecord>,
}

pub const SERIES_HEADER: &str =
    "time_s,goodput_fraction,victim_cost,attacker_pps,subtables,entries";

impl SimSeries {
    pub fn fractions(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.goodput_fraction).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(SERIES_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.6},{:.3},{},{},{}\n",
                r.time_s, r.goodput_fraction, r.victim_cost, r.attacker_pps, r.subtables, r.entries
            ));
        }
        out
    }

    /// Mean fraction over seconds in which `in_window` holds.
    pub fn mean_fraction_where(&self, mut in_window: impl FnMut(u32) -> bool) -> Option<f64> {
        let xs: Vec<_> = self
            .records
            .iter()
            .filter(|r| in_window(r.time_s))
            .map(|r| r.goodput_fraction)
            .collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub ttd: Option<f64>,
    pub ttr: Option<f64>,
    pub dosp: Option<f64>,
    pub plateau_fraction: Option<f64>,
}

/// Seconds a resurgence must hold above `eps_up`, counted as samples.
pub const SUSTAIN_SAMPLES: usize = 3;

/// Window of trailing seconds averaged into the plateau.
pub const PLATEAU_SECONDS: usize = 10;

/// TTD is the first second at or after the attack start whose fraction is
/// at most `eps_down`; TTR the first later second opening a run of
/// [`SUSTAIN_SAMPLES`] seconds at or above `eps_up`. Both relative to the
/// attack start.
pub fn metrics_extract(
    series: &SimSeries,
    attack_start: Option<f64>,
    eps_down: f64,
    eps_up: f64,
) -> Metrics {
    let rs = &series.records;
    let plateau = if rs.is_empty() {
        None
    } else {
        let tail = &rs[rs.len().saturating_sub(PLATEAU_SECONDS)..];
        Some(tail.iter().map(|r| r.goodput_fraction).sum::<f64>() / tail.len() as f64)
    };
    let none = Metrics {
        ttd: None,
        ttr: None,
        dosp: None,
        plateau_fraction: plateau,
    };
    let Some(start) = attack_start else {
        return none;
    };
    let Some(d) = rs
        .iter()
        .position(|r| r.time_s as f64 >= start && r.goodput_fraction <= eps_down)
    else {
        return none;
    };
    let ttd = rs[d].time_s as f64 - start;
    let ttr = (d + 1..rs.len())
        .find(|&i| {
            i + SUSTAIN_SAMPLES <= rs.len()
                && rs[i..i + SUSTAIN_SAMPLES]
                    .iter()
                    .all(|r| r.goodput_fraction >= eps_up)
        })
        .map(|i| rs[i].time_s as f64 - start);
    Metrics {
        ttd: Some(ttd),
        ttr,
        dosp: ttr.map(|r| r - ttd),
        plateau_fraction: plateau,
    }
}

impl Metrics {
    pub fn to_text(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "absent".to_string(), |x| format!("{x}"));
        format!(
            "ttd={}\nttr={}\ndosp={}\nplateau_fraction={}\n",
            f(self.ttd),
            f(self.ttr),
            f(self.dosp),
            self.plateau_fraction
                .map_or_else(|| "absent".to_string(), |x| format!("{x:.6}"))
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BatchState {
    Absent,
    Generating,
    Active,
    Expiring,
    NeverCreated,
}

impl BatchState {
    pub fn code(self) -> char {
        match self {
            BatchState::Absent => 'A',
            BatchState::Generating => 'G',
            BatchState::Active => 'B',
            BatchState::Expiring => 'R',
            BatchState::NeverCreated => 'Y',
        }
    }

    pub fn from_code(c: char) -> Option<Self> {
        Some(match c {
            'A' => BatchState::Absent,
            'G' => BatchState::Generating,
            'B' => BatchState::Active,
            'R' => BatchState::Expiring,
            'Y' => BatchState::NeverCreated,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackState {
    Batch(usize),
    Sleep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheMapFrame {
    pub second: u32,
    pub batches: Vec<BatchState>,
    pub attack_state: AttackState,
}

/// Per-batch mask lifecycle bookkeeping behind the cache map.
///
/// A mask belongs to the batch of the last attack packet that created or
/// hit it; a batch is the packet's 1000-packet chunk within its phase.
#[derive(Debug, Clone, Default)]
pub struct CacheMapTracker {
    batches: usize,
    reachable: usize,
    label: HashMap<u128, usize>,
    present: Vec<usize>,
    created: BTreeMap<u32, Vec<usize>>,
    expired: BTreeMap<u32, Vec<usize>>,
    last_chunk: BTreeMap<u32, usize>,
}

impl CacheMapTracker {
    pub fn new(batches: usize, reachable: usize) -> Self {
        CacheMapTracker {
            batches,
            reachable,
            present: vec![0; batches],
            ..Default::default()
        }
    }

    fn bump(map: &mut BTreeMap<u32, Vec<usize>>, n: usize, second: u32, batch: usize) {
        map.entry(second).or_insert_with(|| vec![0; n])[batch] += 1;
    }

    pub fn on_attack_packet(
        &mut self,
        mask: Option<&HeaderMask>,
        created: bool,
        chunk: usize,
        t: f64,
    ) {
        let second = t.floor() as u32;
        self.last_chunk.insert(second, chunk);
        let Some(mask) = mask else { return };
        let chunk = chunk.min(self.batches.saturating_sub(1));
        if let Some(old) = self.label.insert(mask.bits(), chunk) {
            self.present[old] -= 1;
        }
        self.present[chunk] += 1;
        if created {
            Self::bump(&mut self.created, self.batches, second, chunk);
        }
    }

    /// A subtable was removed; `expired_at` is when it became idle enough.
    pub fn on_removed(&mut self, mask: &HeaderMask, expired_at: f64) {
        if let Some(b) = self.label.remove(&mask.bits()) {
            self.present[b] -= 1;
            Self::bump(
                &mut self.expired,
                self.batches,
                expired_at.floor() as u32,
                b,
            );
        }
    }

    pub fn attack_masks(&self) -> usize {
        self.label.len()
    }

    pub fn frame(&mut self, second: u32) -> CacheMapFrame {
        let created = self.created.remove(&second);
        let expired = self.expired.remove(&second);
        let batches = (0..self.batches)
            .map(|b| {
                if b >= self.reachable {
                    BatchState::NeverCreated
                } else if created.as_ref().is_some_and(|c| c[b] > 0) {
                    BatchState::Generating
                } else if expired.as_ref().is_some_and(|c| c[b] > 0) {
                    BatchState::Expiring
                } else if self.present[b] > 0 {
                    BatchState::Active
                } else {
                    BatchState::Absent
                }
            })
            .collect();
        let attack_state = self
            .last_chunk
            .remove(&second)
            .map_or(AttackState::Sleep, AttackState::Batch);
        CacheMapFrame {
            second,
            batches,
            attack_state,
        }
    }
}

/// Cache map as CSV: `second,attack,b1..bN` with one state code per batch
/// and `X` for a sleeping attacker.
pub fn cache_map_csv(frames: &[CacheMapFrame]) -> String {
    let n = frames.first().map_or(0, |f| f.batches.len());
    let mut out = String::from("second,attack");
    for b in 1..=n {
        out.push_str(&format!(",b{b}"));
    }
    out.push('\n');
    for f in frames {
        let a = match f.attack_state {
            AttackState::Batch(b) => (b + 1).to_string(),
            AttackState::Sleep => "X".into(),
        };
        out.push_str(&format!("{},{}", f.second, a));
        for s in &f.batches {
            out.push(',');
            out.push(s.code());
        }
        out.push('\n');
    }
    out
}

/// One run's products.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub series: SimSeries,
    pub metrics: Metrics,
    pub frames: Vec<CacheMapFrame>,
    pub victims: Vec<HeaderValue>,
    pub final_snapshot: String,
}

/// `count` exact victim flows, alternating direction, with seeded ports.
pub fn victim_headers(config: &SimConfig, acl: &Acl) -> Vec<HeaderValue> {
    let layout = acl.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (src, dst) = (ipv4(&config.victim_src), ipv4(&config.victim_dst));
    let mut out = Vec::new();
    while out.len() < config.victim_flow_count {
        let sport = rng.gen_range(1024u64..=65535);
        let dport = rng.gen_range(1024u64..=65535);
        for (a, b, sp, dp) in [(src, dst, sport, dport), (dst, src, dport, sport)] {
            if out.len() < config.victim_flow_count {
                out.push(layout.header(&[a, b, 6, sp, dp]).expect("field widths"));
            }
        }
    }
    out
}

/// Stepwise simulation; [`run`] drives it to completion.
pub struct Simulation<'a> {
    config: SimConfig,
    cache: FlowCache,
    traces: Vec<&'a Trace>,
    streams: Vec<std::iter::Peekable<EmissionStream>>,
    victims: Vec<HeaderValue>,
    tracker: CacheMapTracker,
    tps: u32,
    tick_no: u64,
    acc: Acc,
    series: SimSeries,
    frames: Vec<CacheMapFrame>,
}

#[derive(Debug, Default, Clone)]
struct Acc {
    fraction: f64,
    victim_cost: f64,
    attacker_packets: u64,
    budget: f64,
    attacker_units: f64,
    victim_units: f64,
    attacker_demand: f64,
}

impl<'a> Simulation<'a> {
    pub fn new(config: &SimConfig, acl: &Acl, traces: &'a [Trace]) -> Result<Self, EngineError> {
        config.validate()?;
        let mut picked = Vec::new();
        for i in 0..config.attacks.len() {
            let t = traces
                .get(i)
                .or_else(|| traces.first())
                .filter(|t| !t.is_empty())
                .ok_or(EngineError::MissingTrace(i))?;
            picked.push(t);
        }
        let streams = config
            .attacks
            .iter()
            .zip(&picked)
            .map(|(s, t)| schedule_emissions(t, s, config.duration).peekable())
            .collect();
        let batches = picked.first().map_or(0, |t| t.batches());
        let reachable = config
            .attacks
            .first()
            .map_or(0, |s| s.chunks_per_phase(batches));
        let mut cache = FlowCache::new(acl.clone(), config.cache.clone());
        let victims = victim_headers(config, acl);
        let full = acl.layout().full_mask();
        for v in &victims {
            cache.mfc_insert(&key_for(v, &full), &full, Action::Allow, 0.0);
            cache.emc_insert(v, Action::Allow);
        }
        Ok(Simulation {
            tps: config.ticks_per_second()?,
            config: config.clone(),
            cache,
            traces: picked,
            streams,
            victims,
            tracker: CacheMapTracker::new(batches, reachable),
            tick_no: 0,
            acc: Acc::default(),
            series: SimSeries::default(),
            frames: Vec::new(),
        })
    }

    pub fn cache(&self) -> &FlowCache {
        &self.cache
    }

    pub fn victims(&self) -> &[HeaderValue] {
        &self.victims
    }

    pub fn now(&self) -> f64 {
        self.tick_no as f64 / self.tps as f64
    }

    pub fn total_ticks(&self) -> u64 {
        (self.config.duration * self.tps as f64).round() as u64
    }

    pub fn done(&self) -> bool {
        self.tick_no >= self.total_ticks()
    }

    fn victim_rank(&self) -> Option<usize> {
        self.victims
            .iter()
            .filter_map(|v| {
                self.cache
                    .lookup_mask(v)
                    .and_then(|m| self.cache.search_index(&m))
            })
            .min()
    }

    /// Advances one tick.
    pub fn step(&mut self) {
        let t1 = (self.tick_no + 1) as f64 / self.tps as f64;
        let cfg = &self.config;

        let mut due = Vec::new();
        for (i, s) in self.streams.iter_mut().enumerate() {
            while let Some(e) = s.next_if(|e| e.t < t1) {
                due.push((e, i));
            }
        }
        due.sort_by(|a, b| a.0.t.total_cmp(&b.0.t));
        let mut attacker_demand = 0.0;
        for (e, i) in &due {
            let h = self.traces[*i].packets[e.trace_index];
            let r = self.cache.classify(&h, e.t);
            attacker_demand += r.cost_units;
            self.tracker
                .on_attack_packet(r.mask.as_ref(), r.created_subtable, e.chunk, e.t);
        }

        let tick = cfg.tick;
        let budget = cfg.budget_per_core * cfg.cores as f64 * tick;
        let victim_cost = victim_cost_probe(&self.cache, &self.victims);
        let victim_demand = cfg.victim_offered * tick * victim_cost;
        let alloc = allocate(budget, attacker_demand, victim_demand, cfg.victim_floor);

        if !self.victims.is_empty() && cfg.victim_offered > 0.0 {
            let served = alloc.fraction * cfg.victim_offered * tick;
            let per_flow = ((served / self.victims.len() as f64).round() as u64).max(1);
            for v in self.victims.clone() {
                if self.cache.emc_lookup(&v).is_some() {
                    continue;
                }
                if !self.cache.credit(&v, per_flow, t1) {
                    self.cache.classify(&v, t1);
                    self.cache.credit(&v, per_flow - 1, t1);
                }
            }
        }

        let report = self.cache.expire(t1);
        let timeout = self.cache.config().idle_timeout;
        for (mask, latest) in &report.removed_subtables {
            self.tracker.on_removed(mask, latest + timeout);
        }

        let a = &mut self.acc;
        a.fraction += alloc.fraction;
        a.victim_cost += victim_cost;
        a.attacker_packets += due.len() as u64;
        a.budget += budget;
        a.attacker_units += alloc.attacker_units;
        a.victim_units += alloc.victim_units;
        a.attacker_demand += attacker_demand;
        self.tick_no += 1;

        if self.tick_no.is_multiple_of(self.tps as u64) {
            self.close_second();
        }
    }

    fn close_second(&mut self) {
        let second = (self.tick_no / self.tps as u64 - 1) as u32;
        let before = self.victim_rank();
        self.cache.rebalance(self.now());
        let after = self.victim_rank();
        let a = std::mem::take(&mut self.acc);
        let n = self.tps as f64;
        self.series.records.push(SecondRecord {
            time_s: second,
            goodput_fraction: a.fraction / n,
            victim_cost: a.victim_cost / n,
            attacker_pps: a.attacker_packets,
            subtables: self.cache.subtable_count(),
            entries: self.cache.entry_count(),
            attack_masks: self.tracker.attack_masks(),
            victim_rank_before_sort: before,
            victim_rank_after_sort: after,
            budget_units: a.budget,
            attacker_units: a.attacker_units,
            victim_units: a.victim_units,
            attacker_demand: a.attacker_demand,
        });
        self.frames.push(self.tracker.frame(second));
    }

    pub fn finish(mut self) -> SimOutput {
        while !self.done() {
            self.step();
        }
        let metrics = metrics_extract(
            &self.series,
            self.config.attack_start(),
            self.config.eps_down,
            self.config.eps_up,
        );
        SimOutput {
            final_snapshot: self.cache.snapshot(),
            series: self.series,
            metrics,
            frames: self.frames,
            victims: self.victims,
        }
    }
}

/// Runs a whole simulation. Attack schedule `i` replays `traces[i]`, or the
/// first trace when there are fewer traces than schedules.
pub fn run(config: &SimConfig, acl: &Acl, traces: &[Trace]) -> Result<SimOutput, EngineError> {
    Ok(Simulation::new(config, acl, traces)?.finish())
}
