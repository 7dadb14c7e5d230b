//! File formats, scenario configuration and the command implementations
//! behind the `tsesim` binary.

use std::fmt::Write as _;
use std::fs;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::attack::{
    benign_fill, build_trace, clone_factor, schedule_emissions, target_acl, AttackError,
    AttackSchedule, Trace, UseCase,
};
use crate::engine::{
    cache_map_csv, run, BatchState, SimConfig, SimOutput, DEFAULT_BUDGET_PER_CORE,
};
use crate::flow_cache::{CacheConfig, FlowCache};
use crate::header::{ipv4, HeaderValue, Layout, DPORT, IP_DST, IP_SRC, PROTO, SPORT};
use crate::slowpath::{Acl, AclError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed input: {0}")]
    Malformed(String),
}

impl CliError {
    /// 2 for configuration problems, 1 for everything at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } | CliError::Malformed(_) => 1,
        }
    }
}

impl From<AclError> for CliError {
    fn from(e: AclError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<AttackError> for CliError {
    fn from(e: AttackError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// One `t=<s> ip_src=<a.b.c.d> ip_dst=<a.b.c.d> proto=<n> sport=<n> dport=<n>`
/// line per packet.
pub fn export_trace(packets: &[(f64, HeaderValue)]) -> String {
    let l = Layout::five_tuple();
    let mut out = String::new();
    for (t, h) in packets {
        let v = l.values(h);
        let _ = writeln!(
            out,
            "t={t} ip_src={} ip_dst={} proto={} sport={} dport={}",
            Ipv4Addr::from(v[IP_SRC] as u32),
            Ipv4Addr::from(v[IP_DST] as u32),
            v[PROTO],
            v[SPORT],
            v[DPORT]
        );
    }
    out
}

pub fn import_trace(text: &str) -> Result<Vec<(f64, HeaderValue)>, CliError> {
    let l = Layout::five_tuple();
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: &str| CliError::Malformed(format!("trace line {}: {m}", n + 1));
        let mut t = None;
        let mut vals = [None::<u64>; 5];
        for tok in line.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| bad("expected key=value"))?;
            let field = match k {
                "t" => {
                    t = Some(v.parse::<f64>().map_err(|_| bad("bad time"))?);
                    continue;
                }
                "ip_src" => IP_SRC,
                "ip_dst" => IP_DST,
                "proto" => PROTO,
                "sport" => SPORT,
                "dport" => DPORT,
                other => return Err(bad(&format!("unknown key `{other}`"))),
            };
            let value = if field <= IP_DST {
                v.parse::<Ipv4Addr>().map(|a| u32::from(a) as u64).ok()
            } else {
                v.parse::<u64>().ok()
            };
            vals[field] = Some(value.ok_or_else(|| bad(&format!("bad value for {k}")))?);
        }
        let t = t.ok_or_else(|| bad("missing t"))?;
        let values: Option<Vec<u64>> = vals.iter().copied().collect();
        let values = values.ok_or_else(|| bad("missing field"))?;
        let h = l.header(&values).map_err(|e| bad(&e.to_string()))?;
        out.push((t, h));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum Variant {
    #[serde(rename = "1.0")]
    Tse1,
    #[serde(rename = "2.0")]
    Tse2,
    #[serde(rename = "2.1")]
    Tse21,
}

impl std::str::FromStr for Variant {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1.0" | "1" => Ok(Variant::Tse1),
            "2.0" | "2" => Ok(Variant::Tse2),
            "2.1" => Ok(Variant::Tse21),
            other => Err(CliError::Config(format!(
                "unknown attack variant `{other}`"
            ))),
        }
    }
}

/// Scenario file contents; every key is optional and unknown keys are
/// rejected.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub acl: Option<PathBuf>,
    pub use_case: Option<UseCase>,
    pub trace: Option<PathBuf>,
    pub full_acl: Option<bool>,
    pub tse: Option<Variant>,
    pub attack: Option<bool>,
    pub rate: Option<f64>,
    pub t_attack: Option<f64>,
    pub t_sleep: Option<f64>,
    pub attack_start: Option<f64>,
    pub cores: Option<u32>,
    pub budget_per_core: Option<f64>,
    pub victim_offered: Option<f64>,
    pub victim_flows: Option<usize>,
    pub emc: Option<bool>,
    pub tick: Option<f64>,
    pub duration: Option<f64>,
    pub seed: Option<u64>,
    pub c_sub: Option<f64>,
    pub c_slow: Option<f64>,
    pub c_emc: Option<f64>,
    pub idle_timeout: Option<f64>,
    pub eps_down: Option<f64>,
    pub eps_up: Option<f64>,
    pub out: Option<PathBuf>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overlay(self, over: ScenarioFile) -> ScenarioFile {
        macro_rules! pick {
            ($($f:ident),*) => { ScenarioFile { $($f: over.$f.or(self.$f)),* } };
        }
        pick!(
            acl,
            use_case,
            trace,
            full_acl,
            tse,
            attack,
            rate,
            t_attack,
            t_sleep,
            attack_start,
            cores,
            budget_per_core,
            victim_offered,
            victim_flows,
            emc,
            tick,
            duration,
            seed,
            c_sub,
            c_slow,
            c_emc,
            idle_timeout,
            eps_down,
            eps_up,
            out
        )
    }
}

/// Where the attack packets come from.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceSource {
    UseCase(UseCase),
    File(PathBuf),
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub acl_path: Option<PathBuf>,
    /// Keep the whole ACL instead of only the rules on targeted fields.
    pub full_acl: bool,
    pub source: TraceSource,
    pub variant: Variant,
    pub attack: bool,
    pub rate: f64,
    pub t_attack: f64,
    pub t_sleep: f64,
    pub attack_start: f64,
    pub sim: SimConfig,
    pub out: PathBuf,
}

/// Resolves a scenario: defaults, then the file, then flag values.
pub fn parse_config(file: Option<&Path>, flags: ScenarioFile) -> Result<Scenario, CliError> {
    let base = match file {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            ScenarioFile::parse(&text)?
        }
        None => ScenarioFile::default(),
    };
    resolve(base.overlay(flags))
}

pub fn resolve(f: ScenarioFile) -> Result<Scenario, CliError> {
    let d = SimConfig::default();
    let cache_d = CacheConfig::default();
    let source = match (&f.trace, f.use_case) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "give either a use case or a trace, not both".into(),
            ))
        }
        (Some(p), None) => TraceSource::File(p.clone()),
        (None, u) => TraceSource::UseCase(u.unwrap_or(UseCase::SipSpDp)),
    };
    let variant = f.tse.unwrap_or(Variant::Tse1);
    let rate = f.rate.unwrap_or(1000.0);
    let (t_attack, t_sleep) = match variant {
        Variant::Tse1 => {
            if f.t_attack.is_some() || f.t_sleep.is_some() {
                return Err(CliError::Config(
                    "t_attack/t_sleep need an attack/sleep variant (--tse 2.0 or 2.1)".into(),
                ));
            }
            (f64::INFINITY, 0.0)
        }
        _ => (f.t_attack.unwrap_or(10.0), f.t_sleep.unwrap_or(2.0)),
    };
    let scenario = Scenario {
        acl_path: f.acl,
        full_acl: f.full_acl.unwrap_or(false),
        source,
        variant,
        attack: f.attack.unwrap_or(true),
        rate,
        t_attack,
        t_sleep,
        attack_start: f.attack_start.unwrap_or(20.0),
        sim: SimConfig {
            cores: f.cores.unwrap_or(d.cores),
            budget_per_core: f.budget_per_core.unwrap_or(DEFAULT_BUDGET_PER_CORE),
            victim_offered: f.victim_offered.unwrap_or(d.victim_offered),
            victim_flow_count: f.victim_flows.unwrap_or(d.victim_flow_count),
            tick: f.tick.unwrap_or(d.tick),
            duration: f.duration.unwrap_or(d.duration),
            seed: f.seed.unwrap_or(d.seed),
            eps_down: f.eps_down.unwrap_or(d.eps_down),
            eps_up: f.eps_up.unwrap_or(d.eps_up),
            cache: CacheConfig {
                emc_enabled: f.emc.unwrap_or(cache_d.emc_enabled),
                idle_timeout: f.idle_timeout.unwrap_or(cache_d.idle_timeout),
                costs: crate::flow_cache::CostModel {
                    c_emc: f.c_emc.unwrap_or(cache_d.costs.c_emc),
                    c_sub: f.c_sub.unwrap_or(cache_d.costs.c_sub),
                    c_slow: f.c_slow.unwrap_or(cache_d.costs.c_slow),
                },
                ..cache_d
            },
            ..d
        },
        out: f.out.unwrap_or_else(|| PathBuf::from("out")),
    };
    let schedule = scenario.schedule();
    let mut sim = scenario.sim.clone();
    sim.attacks = schedule.into_iter().collect();
    sim.validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    if !(rate > 0.0) && scenario.attack {
        return Err(CliError::Config("rate must be positive".into()));
    }
    Ok(Scenario { sim, ..scenario })
}

impl Scenario {
    pub fn schedule(&self) -> Option<AttackSchedule> {
        if !self.attack {
            return None;
        }
        Some(match self.variant {
            Variant::Tse1 => AttackSchedule::tse1(self.rate, self.attack_start),
            Variant::Tse2 => {
                AttackSchedule::tse2(self.rate, self.t_attack, self.t_sleep, self.attack_start)
            }
            Variant::Tse21 => {
                AttackSchedule::tse21(self.rate, self.t_attack, self.t_sleep, self.attack_start)
            }
        })
    }

    /// The ACL from file, or the reference whitelist, narrowed to the use
    /// case unless `full_acl` is set.
    pub fn load_acl(&self) -> Result<Acl, CliError> {
        let acl = match &self.acl_path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| {
                    CliError::Config(format!("cannot read ACL {}: {e}", p.display()))
                })?;
                Acl::parse(Layout::five_tuple(), &text)?
            }
            None => Acl::simple_tse(),
        };
        acl.validate().map_err(AclError::Invalid)?;
        Ok(match (&self.source, self.full_acl) {
            (TraceSource::UseCase(u), false) => target_acl(*u, &acl),
            _ => acl,
        })
    }

    pub fn load_trace(&self, acl: &Acl) -> Result<Trace, CliError> {
        match &self.source {
            TraceSource::UseCase(u) => {
                let fill = benign_fill(acl.layout(), ipv4(&self.sim.victim_dst));
                Ok(build_trace(*u, acl, &fill)?)
            }
            TraceSource::File(p) => {
                let packets = import_trace(&read(p)?)?;
                if packets.is_empty() {
                    return Err(CliError::Config(format!("trace {} is empty", p.display())));
                }
                Ok(Trace::new(packets.into_iter().map(|(_, h)| h).collect()))
            }
        }
    }
}

/// Distinct masks left after replaying `trace` once through a fresh cache
/// with the EMC off.
pub fn replay_mask_count(acl: &Acl, trace: &Trace) -> usize {
    let mut cache = FlowCache::new(acl.clone(), CacheConfig::default());
    for h in &trace.packets {
        cache.classify(h, 0.0);
    }
    cache.subtable_count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenTraceReport {
    pub path: PathBuf,
    pub packets: usize,
    pub masks: usize,
}

/// Writes one pass of the trace, timestamped at the scenario's rate, to
/// `<out>/trace.txt`.
pub fn cmd_gen_trace(s: &Scenario) -> Result<GenTraceReport, CliError> {
    let acl = s.load_acl()?;
    let trace = s.load_trace(&acl)?;
    let schedule = AttackSchedule {
        clone_factor: 1,
        start: 0.0,
        ..AttackSchedule::tse1(s.rate, 0.0)
    };
    let timed: Vec<_> = schedule_emissions(&trace, &schedule, f64::INFINITY)
        .take(trace.len())
        .map(|e| (e.t, trace.packets[e.trace_index]))
        .collect();
    let path = s.out.join("trace.txt");
    write(&path, &export_trace(&timed))?;
    Ok(GenTraceReport {
        path,
        packets: trace.len(),
        masks: replay_mask_count(&acl, &trace),
    })
}

pub fn simulate(s: &Scenario) -> Result<SimOutput, CliError> {
    let acl = s.load_acl()?;
    let trace = s.load_trace(&acl)?;
    run(&s.sim, &acl, &[trace]).map_err(|e| CliError::Config(e.to_string()))
}

/// Runs the scenario and writes `series.csv`, `metrics.txt` and
/// `cachemap.csv` under the output directory.
pub fn cmd_run(s: &Scenario) -> Result<SimOutput, CliError> {
    let out = simulate(s)?;
    write(&s.out.join("series.csv"), &out.series.to_csv())?;
    write(&s.out.join("metrics.txt"), &out.metrics.to_text())?;
    write(&s.out.join("cachemap.csv"), &cache_map_csv(&out.frames))?;
    Ok(out)
}

/// Turns cache-map CSV into a text grid: one row per batch (first batch on
/// top), then the attacked batch per second (`X` while sleeping), then time.
pub fn render_cache_map(csv: &str) -> Result<String, CliError> {
    let bad = |m: String| CliError::Malformed(format!("cache map: {m}"));
    let mut lines = csv.lines();
    let header = lines.next().ok_or_else(|| bad("empty input".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[0] != "second" || cols[1] != "attack" {
        return Err(bad(format!("unexpected header `{header}`")));
    }
    let n = cols.len() - 2;
    let mut seconds = Vec::new();
    let mut attack = Vec::new();
    let mut grid: Vec<Vec<char>> = vec![Vec::new(); n];
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n + 2 {
            return Err(bad(format!(
                "row {} has {} cells, want {}",
                i + 1,
                cells.len(),
                n + 2
            )));
        }
        let sec: u32 = cells[0]
            .parse()
            .map_err(|_| bad(format!("row {}: bad second `{}`", i + 1, cells[0])))?;
        seconds.push(sec);
        attack.push(cells[1].to_string());
        for (b, c) in cells[2..].iter().enumerate() {
            let ch = c.chars().next().filter(|_| c.len() == 1);
            match ch.and_then(BatchState::from_code) {
                Some(st) => grid[b].push(st.code()),
                None => return Err(bad(format!("row {}: bad state `{c}`", i + 1))),
            }
        }
    }
    let width = seconds
        .iter()
        .map(|s| s.to_string().len())
        .chain(attack.iter().map(|a| a.len()))
        .max()
        .unwrap_or(1)
        + 1;
    let mut out = String::new();
    for (b, row) in grid.iter().enumerate() {
        let _ = write!(out, "{:<8}", format!("{}k", b + 1));
        for c in row {
            let _ = write!(out, "{c:>width$}");
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<8}", "A_batch");
    for a in &attack {
        let _ = write!(out, "{a:>width$}");
    }
    out.push('\n');
    let _ = write!(out, "{:<8}", "T[s]");
    for s in &seconds {
        let _ = write!(out, "{s:>width$}");
    }
    out.push('\n');
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub cores: u32,
    pub rate: f64,
    pub clone_factor: u32,
    /// Mean victim fraction over seconds inside attack phases.
    pub attack_fraction: f64,
    /// Lowest and highest per-second fraction during attack phases.
    pub min_fraction: f64,
    pub max_fraction: f64,
    pub ttd: Option<f64>,
    pub ttr: Option<f64>,
}

impl SweepCell {
    pub fn line(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "absent".into(), |x| format!("{x}"));
        format!(
            "cores={} rate={} n={} attack_fraction={:.6} min_fraction={:.6} max_fraction={:.6} ttd={} ttr={}",
            self.cores,
            self.rate,
            self.clone_factor,
            self.attack_fraction,
            self.min_fraction,
            self.max_fraction,
            f(self.ttd),
            f(self.ttr)
        )
    }
}

/// Seconds `s` whose whole interval `[s, s+1)` lies inside an attack phase
/// of the schedule and after the first full attack cycle.
pub fn attack_seconds(schedule: &AttackSchedule, duration: f64) -> Vec<u32> {
    let warm = schedule.start + schedule.period().unwrap_or(0.0).min(duration);
    (0..duration as u32)
        .filter(|&s| {
            let (a, b) = (s as f64, s as f64 + 1.0 - 1e-9);
            a >= warm && schedule.attacking_at(a) && schedule.attacking_at(b)
        })
        .collect()
}

/// Runs every (cores, rate) cell in parallel, with the clone factor derived
/// from the rate, and writes one metrics line per cell to
/// `<out>/sweep_c<cores>_r<rate>.txt`.
pub fn sweep(s: &Scenario, cores: &[u32], rates: &[f64]) -> Result<Vec<SweepCell>, CliError> {
    let acl = s.load_acl()?;
    let trace = s.load_trace(&acl)?;
    let grid: Vec<(u32, f64)> = cores
        .iter()
        .flat_map(|&c| rates.iter().map(move |&r| (c, r)))
        .collect();
    let cells: Result<Vec<_>, CliError> = grid
        .par_iter()
        .map(|&(c, r)| {
            let schedule = match s.variant {
                Variant::Tse1 => AttackSchedule::tse1(r, s.attack_start),
                Variant::Tse2 => AttackSchedule::tse2(r, s.t_attack, s.t_sleep, s.attack_start),
                Variant::Tse21 => AttackSchedule::tse21(r, s.t_attack, s.t_sleep, s.attack_start),
            };
            let cfg = SimConfig {
                cores: c,
                attacks: vec![schedule],
                ..s.sim.clone()
            };
            let out = run(&cfg, &acl, std::slice::from_ref(&trace))
                .map_err(|e| CliError::Config(e.to_string()))?;
            let secs = attack_seconds(&schedule, cfg.duration);
            let fr: Vec<f64> = out
                .series
                .records
                .iter()
                .filter(|r| secs.contains(&r.time_s))
                .map(|r| r.goodput_fraction)
                .collect();
            let cell = SweepCell {
                cores: c,
                rate: r,
                clone_factor: if s.variant == Variant::Tse21 {
                    clone_factor(r)
                } else {
                    1
                },
                attack_fraction: if fr.is_empty() {
                    1.0
                } else {
                    fr.iter().sum::<f64>() / fr.len() as f64
                },
                min_fraction: fr.iter().copied().fold(1.0, f64::min),
                max_fraction: fr.iter().copied().fold(0.0, f64::max),
                ttd: out.metrics.ttd,
                ttr: out.metrics.ttr,
            };
            write(
                &s.out.join(format!("sweep_c{c}_r{r}.txt")),
                &(cell.line() + "\n"),
            )?;
            Ok(cell)
        })
        .collect();
    cells
}

/// For each core count, the lowest swept rate whose cell meets `beaten`.
pub fn min_beating_rates(
    cells: &[SweepCell],
    beaten: impl Fn(&SweepCell) -> bool,
) -> Vec<(u32, Option<f64>)> {
    let mut cores: Vec<u32> = cells.iter().map(|c| c.cores).collect();
    cores.sort_unstable();
    cores.dedup();
    cores
        .into_iter()
        .map(|c| {
            let r = cells
                .iter()
                .filter(|x| x.cores == c && beaten(x))
                .map(|x| x.rate)
                .reduce(f64::min);
            (c, r)
        })
        .collect()
}
