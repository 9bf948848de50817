//! Pilot run of the rotation recovery experiment.
//!
//! ```text
//! cargo run --release -p sdrmap --example rotation_pilot -- tests/data/rotation_pilot.json
//! ```

use std::time::Instant;

use serde_json::json;

use sdrmap::admm::{SolverConfig, SolverKind};
use sdrmap::probgen::RotationSpec;
use sdrmap::refine::{Resolver, RoundingConfig};
use sdrmap::theory::{recovery_experiment, GenSpec};

const MASTER_SEED: u64 = 2024;
const TRIALS: usize = 20;

fn main() {
    let out = std::env::args().nth(1);
    let trials: usize = std::env::var("PILOT_TRIALS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(TRIALS);
    let config = SolverConfig {
        k_max: 3000,
        ..SolverConfig::sdpad_lr()
    };
    let resolver = Resolver {
        kind: SolverKind::SdpadLr,
        config: config.clone(),
    };
    let rounding = RoundingConfig::default();
    let mut regimes = Vec::new();
    for p_false in [0.3, 0.55] {
        let spec = GenSpec::Rotation(RotationSpec {
            n: 50,
            m: 4,
            p_obs: 0.8,
            p_false,
            seed: 0,
        });
        let start = Instant::now();
        let stats = recovery_experiment(&spec, trials, MASTER_SEED, &resolver, &rounding);
        let secs = start.elapsed().as_secs_f64();
        for o in &stats.outcomes {
            eprintln!(
                "p_false {p_false} seed {} recovered {} converged {} energy {:?} planted {:?}",
                o.seed, o.recovered, o.converged, o.rounded_energy, o.planted_energy
            );
        }
        eprintln!(
            "p_false {p_false}: {}/{} in {secs:.1}s",
            stats.successes, stats.trials
        );
        regimes.push(json!({
            "p_false": p_false,
            "successes": stats.successes,
            "trials": stats.trials,
            "rate": stats.rate,
            "seconds": secs,
        }));
    }
    let doc = json!({
        "n": 50,
        "m": 4,
        "p_obs": 0.8,
        "master_seed": MASTER_SEED,
        "solver": SolverKind::SdpadLr,
        "config": config,
        "rounding": rounding,
        "regimes": regimes,
    });
    let text = serde_json::to_string_pretty(&doc).unwrap() + "\n";
    match out {
        Some(path) => std::fs::write(path, text).unwrap(),
        None => print!("{text}"),
    }
}
