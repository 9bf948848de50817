//! End-to-end runs and their machine-readable reports.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::admm::{SolveOutput, SolveReport, SolverConfig, SolverKind};
use crate::error::{Error, Result};
use crate::mrf::{brute_force_map_with_cap, Assignment, PairwiseMrf};
use crate::refine::{round_solution, Resolver, Rounded, RoundingConfig};
use crate::sdr::build_sdr;

/// Everything about one solve-and-round run. Serialized as indented JSON,
/// one field per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub instance: String,
    pub solver: SolverKind,
    pub seed: u64,
    pub config: SolverConfig,
    pub rounding_config: RoundingConfig,
    pub solve: SolveReport,
    pub rounding: Rounded,
    pub brute_force_energy: Option<f64>,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn to_text(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report fields are serializable");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn assignment(&self) -> &Assignment {
        &self.rounding.assignment
    }
}

/// Options of [`run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub kind: SolverKind,
    pub config: SolverConfig,
    pub rounding: RoundingConfig,
    /// Enumerate the optimum when the state space is at most this large.
    pub brute_force_cap: Option<u64>,
}

impl RunOptions {
    pub fn new(kind: SolverKind) -> Self {
        Self {
            kind,
            config: kind.default_config(),
            rounding: RoundingConfig::default(),
            brute_force_cap: None,
        }
    }
}

/// Builds the relaxation of `mrf`, solves it, rounds the result and
/// optionally enumerates the exact optimum.
pub fn run(
    mrf: &PairwiseMrf,
    instance: &str,
    opts: &RunOptions,
) -> Result<(RunReport, SolveOutput)> {
    opts.config.validate()?;
    opts.rounding.validate()?;
    let start = Instant::now();
    let p = build_sdr(mrf)?;
    let out = opts.kind.solve(&p, &opts.config)?;
    let resolver = Resolver {
        kind: opts.kind,
        config: opts.config.clone(),
    };
    let rounding = round_solution(&p, mrf, &out.solution, &opts.rounding, &resolver)?;
    let brute_force_energy = match opts.brute_force_cap {
        Some(cap) if mrf.state_space_size() <= cap as f64 => {
            Some(brute_force_map_with_cap(mrf, cap)?.1)
        }
        _ => None,
    };
    let report = RunReport {
        instance: instance.to_string(),
        solver: opts.kind,
        seed: opts.config.seed,
        config: opts.config.clone(),
        rounding_config: opts.rounding,
        solve: out.report.clone(),
        rounding,
        brute_force_energy,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((report, out))
}
