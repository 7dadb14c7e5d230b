//! Clone-factor attack (Conf(2) duty cycle) swept over core counts and
//! rates. Each trace packet is sent ceil(rate/1000) times back to back, so
//! masks still appear at 1000 per second while lookups cost more.

use tsesim::io::{min_beating_rates, resolve, sweep, ScenarioFile, Variant};

fn main() {
    let dir = std::env::temp_dir().join("tsesim-sweep-example");
    let scenario = resolve(ScenarioFile {
        tse: Some(Variant::Tse21),
        t_attack: Some(10.0),
        t_sleep: Some(2.0),
        out: Some(dir),
        ..ScenarioFile::default()
    })
    .expect("valid scenario");
    let cores = [1, 2, 3, 4];
    let rates = [1000.0, 2000.0, 3000.0, 4000.0, 6000.0, 8000.0, 12000.0];
    let cells = sweep(&scenario, &cores, &rates).expect("sweep runs");
    for c in &cells {
        println!("{}", c.line());
    }
    for (c, r) in min_beating_rates(&cells, |c| c.attack_fraction <= scenario.sim.eps_down) {
        match r {
            Some(r) => println!("{c} core(s): beaten from {r} pps"),
            None => println!("{c} core(s): not beaten by any swept rate"),
        }
    }
}
