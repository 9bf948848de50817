//! Iterative rounding of relaxed solutions and the gap / infeasibility
//! diagnostics.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::admm::{Duals, SolverConfig, SolverKind};
use crate::eigsolve::psd_project_dense;
use crate::error::{Error, Result};
use crate::mrf::{argmax_first, Assignment, PairwiseMrf};
use crate::sdr::{build_sdr, LiftedSolution, SdrProblem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundingConfig {
    /// Entries above this are fixed.
    pub t_max: f64,
    /// Cap on condition-and-resolve passes.
    pub max_rounds: usize,
}

impl Default for RoundingConfig {
    fn default() -> Self {
        Self {
            t_max: 0.99,
            max_rounds: 10,
        }
    }
}

impl RoundingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_max > 0.5 && self.t_max < 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "t-max must lie in (0.5, 1), got {}",
                self.t_max
            )))
        }
    }
}

/// The solver used for reduced problems.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolver {
    pub kind: SolverKind,
    pub config: SolverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rounded {
    pub assignment: Assignment,
    pub energy: f64,
    /// Reduced problems solved.
    pub resolves: usize,
    /// Energy of the per-block argmax of the input solution.
    pub naive_energy: f64,
    /// Set when the naive decode beat the iterative result and was returned.
    pub used_naive: bool,
}

/// Rounds `sol` to an assignment of `mrf`.
///
/// Each pass fixes the variable holding the largest entry of `x` and every
/// variable with an entry above `t_max`, conditions the model on the fixed
/// states and solves the relaxation of what is left, with `k_max` halved.
/// After `max_rounds` passes the rest is decoded by per-block argmax. The
/// result is never worse than the per-block argmax of `sol` itself.
pub fn round_solution(
    p: &SdrProblem,
    mrf: &PairwiseMrf,
    sol: &LiftedSolution,
    cfg: &RoundingConfig,
    resolver: &Resolver,
) -> Result<Rounded> {
    cfg.validate()?;
    if p.dim() != sol.dim() || p.states() != mrf.states() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: sol.dim(),
        });
    }
    let n = mrf.num_vars();
    let naive = sol.indicator(mrf.states())?.argmax_decode();
    let naive_energy = mrf.energy(&naive)?;

    let mut reduced_cfg = resolver.config.clone();
    reduced_cfg.k_max = (reduced_cfg.k_max / 2).max(1);

    let mut fixed: Vec<Option<usize>> = vec![None; n];
    // blocks of the current relaxed solution, indexed by free variable
    let mut free: Vec<usize> = (0..n).collect();
    let mut blocks = split_blocks(&sol.border(), mrf.states());
    let mut resolves = 0;
    let mut round = 0;
    loop {
        fix_pass(&free, &blocks, cfg.t_max, &mut fixed);
        if fixed.iter().all(Option::is_some) {
            break;
        }
        if round == cfg.max_rounds {
            fix_by_argmax(&free, &blocks, &mut fixed);
            break;
        }
        round += 1;
        let cond = mrf.condition(&fixed)?;
        let solved = build_sdr(&cond.mrf).and_then(|rp| {
            resolver
                .kind
                .solve(&rp, &reduced_cfg)
                .map(|out| out.solution.border())
        });
        free = cond.free;
        match solved {
            Ok(border) => {
                resolves += 1;
                blocks = split_blocks(&border, cond.mrf.states());
            }
            Err(_) => {
                // keep the previous relaxed values of the still-free variables
                let prev = split_blocks(&sol.border(), mrf.states());
                blocks = free.iter().map(|&i| prev[i].clone()).collect();
                fix_by_argmax(&free, &blocks, &mut fixed);
                break;
            }
        }
    }

    let assignment = Assignment::new(fixed.into_iter().map(|s| s.expect("all fixed")).collect());
    let energy = mrf.energy(&assignment)?;
    let used_naive = naive_energy > energy;
    Ok(if used_naive {
        Rounded {
            assignment: naive,
            energy: naive_energy,
            resolves,
            naive_energy,
            used_naive,
        }
    } else {
        Rounded {
            assignment,
            energy,
            resolves,
            naive_energy,
            used_naive,
        }
    })
}

fn split_blocks(x: &[f64], states: &[usize]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(states.len());
    let mut start = 0;
    for &m in states {
        out.push(x[start..start + m].to_vec());
        start += m;
    }
    out
}

/// Fixes the global-max variable and every block with an entry above `t_max`.
fn fix_pass(free: &[usize], blocks: &[Vec<f64>], t_max: f64, fixed: &mut [Option<usize>]) {
    let mut best: Option<(usize, usize, f64)> = None;
    for (k, block) in blocks.iter().enumerate() {
        let s = argmax_first(block);
        let v = block[s];
        if best.is_none_or(|(_, _, b)| v > b) {
            best = Some((k, s, v));
        }
        if v > t_max {
            fixed[free[k]] = Some(s);
        }
    }
    if let Some((k, s, _)) = best {
        fixed[free[k]] = Some(s);
    }
}

fn fix_by_argmax(free: &[usize], blocks: &[Vec<f64>], fixed: &mut [Option<usize>]) {
    for (k, block) in blocks.iter().enumerate() {
        if fixed[free[k]].is_none() {
            fixed[free[k]] = Some(argmax_first(block));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub gap: f64,
    pub inf: f64,
    pub primal_inf: f64,
    pub dual_inf: f64,
}

/// Relative duality gap and infeasibility of a primal-dual pair:
///
/// ```text
/// gap = |⟨b,y⟩ − ⟨C,X̄⟩| / (1 + |⟨b,y⟩| + |⟨C,X̄⟩|)
/// inf = max( (‖A(X̄) − b‖ + ‖min(P(X̄), 0)‖) / (1 + ‖b‖),
///            ‖C + A*(y) − P*(z) − S‖_F / (1 + ‖C‖_F) )
/// ```
///
/// with `C` the minimization cost (the negated model cost). `S` is the slack
/// stored in `duals`; when absent it is the PSD part of `C + A*(y) − P*(z)`.
pub fn diagnostics(
    p: &SdrProblem,
    sol: &LiftedSolution,
    duals: Option<&Duals>,
) -> Result<Diagnostics> {
    let duals = duals
        .ok_or_else(|| Error::DiagnosticsUnavailable("no dual variables were supplied".into()))?;
    let primal = p.objective(sol);
    let dual = p
        .rhs()
        .iter()
        .zip(&duals.y)
        .map(|(b, y)| b * y)
        .sum::<f64>();
    let gap = (dual - primal).abs() / (1.0 + dual.abs() + primal.abs());

    let a = p.apply_a_lifted(sol)?;
    let eq: f64 = a
        .iter()
        .zip(p.rhs())
        .map(|(ax, b)| (ax - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let neg: f64 = p
        .apply_p_lifted(sol)?
        .iter()
        .map(|v| v.min(0.0).powi(2))
        .sum::<f64>()
        .sqrt();
    let b_norm = p.rhs().iter().map(|b| b * b).sum::<f64>().sqrt();
    let primal_inf = (eq + neg) / (1.0 + b_norm);

    let mut g = DMatrix::zeros(p.dim(), p.dim());
    p.dual_matrix(&duals.y, &duals.z)?.add_to_dense(&mut g, 1.0);
    let s = match &duals.slack {
        Some(s) => s.clone(),
        None => psd_project_dense(&g)?.0,
    };
    let dual_inf = (g - s).norm() / (1.0 + p.cost().frobenius_norm());
    Ok(Diagnostics {
        gap,
        inf: primal_inf.max(dual_inf),
        primal_inf,
        dual_inf,
    })
}
