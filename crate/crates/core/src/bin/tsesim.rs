use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tsesim::attack::UseCase;
use tsesim::io::{
    cmd_gen_trace, cmd_run, min_beating_rates, parse_config, render_cache_map, sweep, CliError,
    ScenarioFile, Variant,
};

#[derive(Parser)]
#[command(
    name = "tsesim",
    version,
    about = "Flow cache and tuple space explosion simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write an attack trace and report its packet and mask counts.
    GenTrace(ScenarioArgs),
    /// Simulate a scenario and write series.csv, metrics.txt, cachemap.csv.
    Run(ScenarioArgs),
    /// Print a cache map CSV as a text grid.
    RenderMap { path: PathBuf },
    /// Run a grid of core counts and rates, one metrics line per cell.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
        cores_list: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_value = "1000,3000,6000,12000")]
        rates: Vec<f64>,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// TOML scenario file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    acl: Option<PathBuf>,
    #[arg(long, value_parser = parse_use_case)]
    use_case: Option<UseCase>,
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Keep all ACL rules rather than only those on the targeted fields.
    #[arg(long)]
    full_acl: bool,
    /// Attack variant: 1.0, 2.0 or 2.1.
    #[arg(long, value_parser = parse_variant)]
    tse: Option<Variant>,
    /// Run without an attacker.
    #[arg(long)]
    no_attack: bool,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    t_attack: Option<f64>,
    #[arg(long)]
    t_sleep: Option<f64>,
    #[arg(long)]
    attack_start: Option<f64>,
    #[arg(long)]
    cores: Option<u32>,
    #[arg(long)]
    budget_per_core: Option<f64>,
    #[arg(long)]
    victim_offered: Option<f64>,
    #[arg(long)]
    victim_flows: Option<usize>,
    #[arg(long)]
    emc: Option<bool>,
    #[arg(long)]
    tick: Option<f64>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    c_sub: Option<f64>,
    #[arg(long)]
    c_slow: Option<f64>,
    #[arg(long)]
    c_emc: Option<f64>,
    #[arg(long)]
    idle_timeout: Option<f64>,
    #[arg(long)]
    eps_down: Option<f64>,
    #[arg(long)]
    eps_up: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_use_case(s: &str) -> Result<UseCase, String> {
    s.parse()
        .map_err(|e: tsesim::attack::AttackError| e.to_string())
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: CliError| e.to_string())
}

impl ScenarioArgs {
    fn flags(&self) -> ScenarioFile {
        ScenarioFile {
            acl: self.acl.clone(),
            use_case: self.use_case,
            trace: self.trace.clone(),
            full_acl: self.full_acl.then_some(true),
            tse: self.tse,
            attack: self.no_attack.then_some(false),
            rate: self.rate,
            t_attack: self.t_attack,
            t_sleep: self.t_sleep,
            attack_start: self.attack_start,
            cores: self.cores,
            budget_per_core: self.budget_per_core,
            victim_offered: self.victim_offered,
            victim_flows: self.victim_flows,
            emc: self.emc,
            tick: self.tick,
            duration: self.duration,
            seed: self.seed,
            c_sub: self.c_sub,
            c_slow: self.c_slow,
            c_emc: self.c_emc,
            idle_timeout: self.idle_timeout,
            eps_down: self.eps_down,
            eps_up: self.eps_up,
            out: self.out.clone(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tsesim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::GenTrace(a) => {
            let s = parse_config(a.config.as_deref(), a.flags())?;
            let r = cmd_gen_trace(&s)?;
            println!(
                "trace={} packets={} masks={}",
                r.path.display(),
                r.packets,
                r.masks
            );
        }
        Cmd::Run(a) => {
            let s = parse_config(a.config.as_deref(), a.flags())?;
            let out = cmd_run(&s)?;
            print!("{}", out.metrics.to_text());
            println!("output={}", s.out.display());
        }
        Cmd::RenderMap { path } => {
            let text =
                std::fs::read_to_string(&path).map_err(|source| CliError::Io { path, source })?;
            print!("{}", render_cache_map(&text)?);
        }
        Cmd::Sweep {
            scenario,
            cores_list,
            rates,
        } => {
            let s = parse_config(scenario.config.as_deref(), scenario.flags())?;
            let cells = sweep(&s, &cores_list, &rates)?;
            for c in &cells {
                println!("{}", c.line());
            }
            for (c, r) in min_beating_rates(&cells, |c| c.attack_fraction <= s.sim.eps_down) {
                let r = r.map_or_else(|| "absent".to_string(), |r| r.to_string());
                println!("min_rate cores={c} rate={r}");
            }
        }
    }
    Ok(())
}
