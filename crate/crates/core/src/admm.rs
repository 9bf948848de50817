//! Alternating-direction solvers for the relaxation.
//!
//! Both solvers run the same primal-dual iteration on the minimization form
//! `min ⟨−cost, X̄⟩` (objectives are reported in the maximization sense):
//!
//! ```text
//! X̄_tmp = 2 X̄⁽ᵏ⁻¹⁾ − X̄⁽ᵏ⁻²⁾
//! y     ← y + μ (AA*)⁻¹ (A(X̄_tmp) − b)
//! z     ← (z − μ P(X̄_tmp))₊
//! X̄⁽ᵏ⁾  = Π_{⪰0}( X̄⁽ᵏ⁻¹⁾ − (C + A*(y) − P*(z)) / μ )
//! μ     ← min(ρ μ, μ_max)
//! ```
//!
//! [`sdpad_solve`] keeps `X̄` dense and projects with a full eigendecomposition.
//! [`sdpad_lr_solve`] keeps `X̄ = Y·Yᵀ` and replaces the projection by a rank-`r`
//! truncation computed with Lanczos, doubling `r` when the retained spectrum
//! shows the rank is too small. The truncation falls back to a dense
//! eigendecomposition when the dual matrix is too full for Lanczos to pay off,
//! and for a few iterations after Lanczos fails to converge.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::eigsolve::{
    psd_project_dense, psd_truncate, psd_truncate_dense, ImplicitSymMatrix, LanczosOptions,
    PsdTruncation,
};
use crate::error::{Error, Result};
use crate::sdr::{LiftedSolution, SdrProblem};
use crate::sparse::SymSparse;

/// Which solver to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Sdpad,
    SdpadLr,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Sdpad => "sdpad",
            Self::SdpadLr => "sdpad-lr",
        }
    }

    pub fn default_config(self) -> SolverConfig {
        match self {
            Self::Sdpad => SolverConfig::sdpad(),
            Self::SdpadLr => SolverConfig::sdpad_lr(),
        }
    }

    pub fn solve(self, p: &SdrProblem, cfg: &SolverConfig) -> Result<SolveOutput> {
        match self {
            Self::Sdpad => sdpad_solve(p, cfg),
            Self::SdpadLr => sdpad_lr_solve(p, cfg),
        }
    }
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sdpad" => Ok(Self::Sdpad),
            "sdpad-lr" => Ok(Self::SdpadLr),
            other => Err(Error::InvalidConfig(format!("unknown solver '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Iteration cap.
    pub k_max: usize,
    /// Stopping tolerance on the primal and dual residuals.
    pub eps: f64,
    /// Initial penalty.
    pub mu_min: f64,
    /// Per-iteration penalty growth.
    pub rho: f64,
    /// Penalty cap.
    pub mu_max: f64,
    /// Rank sufficiency ratio for the low-rank solver.
    pub delta: f64,
    pub r_init: usize,
    pub r_max: usize,
    /// Iterations between rank checks.
    pub rank_check_every: usize,
    /// Residual tolerance of the inner eigensolves.
    pub eig_tol: f64,
    pub seed: u64,
    /// Period of trace entries and progress callbacks; 0 keeps only the
    /// final trace entry.
    pub log_every: usize,
}

impl SolverConfig {
    pub fn sdpad() -> Self {
        Self {
            k_max: 1000,
            eps: 1e-4,
            mu_min: 1e-3,
            rho: 1.005,
            mu_max: 10.0,
            delta: 1e-2,
            r_init: 4,
            r_max: 32,
            rank_check_every: 1000,
            eig_tol: 1e-9,
            seed: 0,
            log_every: 100,
        }
    }

    pub fn sdpad_lr() -> Self {
        Self {
            k_max: 5000,
            ..Self::sdpad()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eps", self.eps),
            ("mu-min", self.mu_min),
            ("mu-max", self.mu_max),
            ("delta", self.delta),
            ("eig-tol", self.eig_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.rho > 1.0 && self.rho.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "rho must exceed 1, got {}",
                self.rho
            )));
        }
        if self.mu_max < self.mu_min {
            return Err(Error::InvalidConfig("mu-max is below mu-min".into()));
        }
        if self.k_max == 0 {
            return Err(Error::InvalidConfig("k-max must be positive".into()));
        }
        if self.r_init == 0 || self.r_init > self.r_max {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= r <= r-max, got r = {}, r-max = {}",
                self.r_init, self.r_max
            )));
        }
        if self.rank_check_every == 0 {
            return Err(Error::InvalidConfig(
                "rank check period must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One row of the per-iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub k: usize,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub mu: f64,
    pub rank: usize,
}

/// A rank-doubling event of the low-rank solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankRestart {
    pub iteration: usize,
    pub from: usize,
    pub to: usize,
}

/// Passed to the progress callback every `log_every` iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    pub k: usize,
    pub objective: f64,
    pub primal_residual: f64,
    pub mu: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub solver: SolverKind,
    /// `⟨cost, X̄⟩`, maximization sense.
    pub objective: f64,
    /// `⟨b, y⟩`, an upper bound on the objective when the duals are feasible.
    pub dual_objective: f64,
    pub gap: f64,
    pub inf: f64,
    /// `‖A(X̄) − b‖ + ‖min(P(X̄), 0)‖`.
    pub primal_residual: f64,
    /// `μ ‖X̄⁽ᵏ⁾ − X̄⁽ᵏ⁻¹⁾‖_F`.
    pub dual_residual: f64,
    pub iterations: usize,
    pub final_rank: usize,
    /// Smallest over largest retained eigenvalue of the last projection; the
    /// dense solver retains two, so there it equals `rank_one_ratio`.
    pub eigval_ratio: f64,
    /// `max(λ₂, 0) / λ₁` of the final `X̄`; near zero when it is numerically rank one.
    pub rank_one_ratio: f64,
    pub converged: bool,
    /// The low-rank solver hit `r_max` with the ratio test still failing.
    pub rank_insufficient: bool,
    pub restarts: Vec<RankRestart>,
    pub trace: Vec<TraceEntry>,
}

/// Dual iterates at termination.
#[derive(Debug, Clone, PartialEq)]
pub struct Duals {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    /// Penalty used in the last iteration.
    pub mu: f64,
    /// The PSD slack of the last projection, when it was formed densely.
    pub slack: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub solution: LiftedSolution,
    pub duals: Duals,
    pub report: SolveReport,
}

/// Closed-form dual step from the extrapolated point, given its images
/// `a_tmp = A(X̄_tmp)` and `p_tmp = P(X̄_tmp)`.
///
/// Returns `y + μ (AA*)⁻¹(a_tmp − b)` and `(z − μ p_tmp)₊`.
pub fn dual_closed_forms(
    p: &SdrProblem,
    y: &[f64],
    z: &[f64],
    a_tmp: &[f64],
    p_tmp: &[f64],
    mu: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if z.len() != p_tmp.len() || z.len() != p.nonneg_set().len() {
        return Err(Error::DimensionMismatch {
            expected: p.nonneg_set().len(),
            got: z.len().min(p_tmp.len()),
        });
    }
    if a_tmp.len() != p.num_eq() || y.len() != p.num_eq() {
        return Err(Error::DimensionMismatch {
            expected: p.num_eq(),
            got: a_tmp.len().min(y.len()),
        });
    }
    let residual: Vec<f64> = a_tmp.iter().zip(p.rhs()).map(|(a, b)| a - b).collect();
    let t = p.solve_gram(&residual)?;
    let y_new = y.iter().zip(&t).map(|(yk, tk)| yk + mu * tk).collect();
    let z_new = z
        .iter()
        .zip(p_tmp)
        .map(|(zk, pk)| (zk - mu * pk).max(0.0))
        .collect();
    Ok((y_new, z_new))
}

/// Shared bookkeeping: images of the last two iterates and the dual state.
struct DualState {
    y: Vec<f64>,
    z: Vec<f64>,
    a_prev: Vec<f64>,
    a_prev2: Vec<f64>,
    p_prev: Vec<f64>,
    p_prev2: Vec<f64>,
    mu: f64,
}

impl DualState {
    fn new(p: &SdrProblem, mu: f64) -> Self {
        let m = p.num_eq();
        let e = p.nonneg_set().len();
        Self {
            y: vec![0.0; m],
            z: vec![0.0; e],
            a_prev: vec![0.0; m],
            a_prev2: vec![0.0; m],
            p_prev: vec![0.0; e],
            p_prev2: vec![0.0; e],
            mu,
        }
    }

    fn step(&mut self, p: &SdrProblem) -> Result<()> {
        let a_tmp: Vec<f64> = extrapolate(&self.a_prev, &self.a_prev2);
        let p_tmp: Vec<f64> = extrapolate(&self.p_prev, &self.p_prev2);
        let (y, z) = dual_closed_forms(p, &self.y, &self.z, &a_tmp, &p_tmp, self.mu)?;
        self.y = y;
        self.z = z;
        Ok(())
    }

    fn push_images(&mut self, a: Vec<f64>, pv: Vec<f64>) {
        self.a_prev2 = std::mem::replace(&mut self.a_prev, a);
        self.p_prev2 = std::mem::replace(&mut self.p_prev, pv);
    }

    fn primal_residual(&self, p: &SdrProblem) -> f64 {
        eq_violation(&self.a_prev, p.rhs()) + nonneg_violation(&self.p_prev)
    }
}

fn extrapolate(prev: &[f64], prev2: &[f64]) -> Vec<f64> {
    prev.iter().zip(prev2).map(|(a, b)| 2.0 * a - b).collect()
}

pub(crate) fn eq_violation(ax: &[f64], b: &[f64]) -> f64 {
    ax.iter()
        .zip(b)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn nonneg_violation(px: &[f64]) -> f64 {
    px.iter().map(|v| v.min(0.0).powi(2)).sum::<f64>().sqrt()
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative gap and scaled infeasibility from the residual pieces.
fn gap_and_inf(
    p: &SdrProblem,
    objective: f64,
    dual_objective: f64,
    primal: f64,
    dual: f64,
) -> (f64, f64) {
    let gap = (dual_objective - objective).abs() / (1.0 + dual_objective.abs() + objective.abs());
    let inf = (primal / (1.0 + norm2(p.rhs()))).max(dual / (1.0 + p.cost().frobenius_norm()));
    (gap, inf)
}

fn dual_objective(p: &SdrProblem, y: &[f64]) -> f64 {
    p.rhs().iter().zip(y).map(|(b, y)| b * y).sum()
}

/// SDPAD with a dense iterate.
pub fn sdpad_solve(p: &SdrProblem, cfg: &SolverConfig) -> Result<SolveOutput> {
    sdpad_solve_observed(p, cfg, &mut |_| {})
}

pub fn sdpad_solve_observed(
    p: &SdrProblem,
    cfg: &SolverConfig,
    progress: &mut dyn FnMut(&Progress),
) -> Result<SolveOutput> {
    cfg.validate()?;
    let n = p.dim();
    let mut state = DualState::new(p, cfg.mu_min);
    let mut x_prev = DMatrix::<f64>::zeros(n, n);
    let mut trace = Vec::new();
    let mut last = None;

    for k in 1..=cfg.k_max {
        state.step(p)?;
        let g = p.dual_matrix(&state.y, &state.z)?;
        let mut v = x_prev.clone();
        g.add_to_dense(&mut v, -1.0 / state.mu);
        let (x, eigs) = psd_project_dense(&v)?;
        let dual_res = state.mu * (&x - &x_prev).norm();
        let a = p.apply_a(&x)?;
        let pv = p.apply_p(&x)?;
        state.push_images(a, pv);
        let primal_res = state.primal_residual(p);
        let objective = p.cost().inner_dense(&x);
        let rank = eigs
            .iter()
            .take_while(|&&l| l > crate::eigsolve::EIG_ZERO_TOL)
            .count();
        let converged = primal_res.max(dual_res) <= cfg.eps;
        let finished = converged || k == cfg.k_max;
        let logged = cfg.log_every > 0 && k % cfg.log_every == 0;
        if logged || finished {
            trace.push(TraceEntry {
                k,
                objective,
                primal_residual: primal_res,
                dual_residual: dual_res,
                mu: state.mu,
                rank,
            });
        }
        if logged {
            progress(&Progress {
                k,
                objective,
                primal_residual: primal_res,
                mu: state.mu,
                rank,
            });
        }
        if finished {
            let slack = (&x - &v) * state.mu;
            let ratio = rank_one_ratio(&eigs);
            last = Some((
                x, slack, converged, k, rank, ratio, dual_res, primal_res, objective,
            ));
            break;
        }
        x_prev = x;
        state.mu = (state.mu * cfg.rho).min(cfg.mu_max);
    }

    let (x, slack, converged, iterations, rank, ratio, dual_res, primal_res, objective) =
        last.expect("k_max >= 1");
    let dobj = dual_objective(p, &state.y);
    let (gap, inf) = gap_and_inf(p, objective, dobj, primal_res, dual_res);
    Ok(SolveOutput {
        solution: LiftedSolution::Dense(x),
        duals: Duals {
            y: state.y,
            z: state.z,
            mu: state.mu,
            slack: Some(slack),
        },
        report: SolveReport {
            solver: SolverKind::Sdpad,
            objective,
            dual_objective: dobj,
            gap,
            inf,
            primal_residual: primal_res,
            dual_residual: dual_res,
            iterations,
            final_rank: rank,
            eigval_ratio: ratio,
            rank_one_ratio: ratio,
            converged,
            rank_insufficient: false,
            restarts: Vec::new(),
            trace,
        },
    })
}

fn rank_one_ratio(eigs_desc: &[f64]) -> f64 {
    match eigs_desc {
        [l1, l2, ..] if *l1 > 0.0 => l2.max(0.0) / l1,
        _ => 0.0,
    }
}

/// `‖Y₁Y₁ᵀ − Y₀Y₀ᵀ‖_F` through a thin QR of `[Y₁ Y₀]`, which avoids the
/// cancellation of expanding the squared norm.
pub(crate) fn factored_difference_norm(y1: &DMatrix<f64>, y0: &DMatrix<f64>) -> f64 {
    let (r1, r0) = (y1.ncols(), y0.ncols());
    let mut z = DMatrix::zeros(y1.nrows(), r1 + r0);
    z.columns_mut(0, r1).copy_from(y1);
    z.columns_mut(r1, r0).copy_from(y0);
    if z.nrows() < z.ncols() {
        return (y1 * y1.transpose() - y0 * y0.transpose()).norm();
    }
    let r = z.qr().r();
    let ra = r.columns(0, r1);
    let rb = r.columns(r1, r0);
    (ra * ra.transpose() - rb * rb.transpose()).norm()
}

/// SDPAD-LR with a factored iterate `X̄ = Y·Yᵀ`.
/// Iterations spent on dense projections after Lanczos fails to converge.
const LANCZOS_BACKOFF: usize = 25;

/// Above this fraction of nonzeros a dense eigendecomposition is cheaper
/// than the matrix-vector products Lanczos needs.
const DENSE_FILL: f64 = 0.125;

fn too_full(g: &SymSparse) -> bool {
    let n = g.dim() as f64;
    2.0 * g.nnz_upper() as f64 >= DENSE_FILL * n * n
}

fn dense_truncation(
    y_prev: &DMatrix<f64>,
    g: &SymSparse,
    mu: f64,
    r: usize,
) -> Result<PsdTruncation> {
    let mut v = y_prev * y_prev.transpose();
    g.add_to_dense(&mut v, -1.0 / mu);
    psd_truncate_dense(&v, r)
}

pub fn sdpad_lr_solve(p: &SdrProblem, cfg: &SolverConfig) -> Result<SolveOutput> {
    sdpad_lr_solve_observed(p, cfg, &mut |_| {})
}

pub fn sdpad_lr_solve_observed(
    p: &SdrProblem,
    cfg: &SolverConfig,
    progress: &mut dyn FnMut(&Progress),
) -> Result<SolveOutput> {
    cfg.validate()?;
    let n = p.dim();
    let mut state = DualState::new(p, cfg.mu_min);
    let mut y_prev = DMatrix::<f64>::zeros(n, 1);
    let mut warm: Option<DMatrix<f64>> = None;
    let mut r = cfg.r_init;
    let mut restarts = Vec::new();
    let mut rank_insufficient = false;
    let mut trace = Vec::new();
    let mut last = None;
    let mut dense_until = 0;

    for k in 1..=cfg.k_max {
        state.step(p)?;
        let g = p.dual_matrix(&state.y, &state.z)?;
        let trunc = if r + 1 < n && k >= dense_until && !too_full(&g) {
            let op = ImplicitSymMatrix {
                factor: Some(&y_prev),
                sparse: &g,
                sparse_scale: -1.0 / state.mu,
            };
            let opts = LanczosOptions {
                tol: cfg.eig_tol,
                max_restarts: None,
                krylov_dim: None,
                seed: cfg.seed.wrapping_add(k as u64),
            };
            match psd_truncate(&op, r, &opts, warm.as_ref()) {
                Ok(t) => t,
                Err(Error::EigenNotConverged { .. }) => {
                    dense_until = k + LANCZOS_BACKOFF;
                    dense_truncation(&y_prev, &g, state.mu, r)?
                }
                Err(e) => return Err(e),
            }
        } else {
            dense_truncation(&y_prev, &g, state.mu, r)?
        };
        let y_new = trunc.factor;
        let lambda_max = trunc.eigenvalues[0];
        let lambda_min = *trunc.eigenvalues.last().expect("r >= 1");
        let ratio = if lambda_max > 0.0 {
            lambda_min.max(0.0) / lambda_max
        } else {
            0.0
        };
        let one_ratio = rank_one_ratio(&trunc.eigenvalues);
        warm = Some(trunc.eigenvectors);

        let dual_res = state.mu * factored_difference_norm(&y_new, &y_prev);
        let a = p.apply_a_factored(&y_new)?;
        let pv = p.apply_p_factored(&y_new)?;
        state.push_images(a, pv);
        let primal_res = state.primal_residual(p);
        let objective = p.cost().inner_factored(&y_new);
        let converged = ratio <= cfg.delta && primal_res.max(dual_res) <= cfg.eps;
        let finished = converged || k == cfg.k_max;
        let logged = cfg.log_every > 0 && k % cfg.log_every == 0;
        if logged || finished {
            trace.push(TraceEntry {
                k,
                objective,
                primal_residual: primal_res,
                dual_residual: dual_res,
                mu: state.mu,
                rank: trunc.rank,
            });
        }
        if logged {
            progress(&Progress {
                k,
                objective,
                primal_residual: primal_res,
                mu: state.mu,
                rank: trunc.rank,
            });
        }
        if finished {
            last = Some((
                y_new, converged, k, trunc.rank, ratio, one_ratio, dual_res, primal_res, objective,
            ));
            break;
        }
        y_prev = y_new;
        state.mu = (state.mu * cfg.rho).min(cfg.mu_max);
        if k % cfg.rank_check_every == 0 && ratio > cfg.delta {
            if r < cfg.r_max {
                let to = (2 * r).min(cfg.r_max);
                restarts.push(RankRestart {
                    iteration: k,
                    from: r,
                    to,
                });
                r = to;
                state.mu = cfg.mu_min;
            } else {
                rank_insufficient = true;
            }
        }
    }

    let (y, converged, iterations, rank, ratio, one_ratio, dual_res, primal_res, objective) =
        last.expect("k_max >= 1");
    if ratio > cfg.delta && r >= cfg.r_max {
        rank_insufficient = true;
    }
    let dobj = dual_objective(p, &state.y);
    let (gap, inf) = gap_and_inf(p, objective, dobj, primal_res, dual_res);
    Ok(SolveOutput {
        solution: LiftedSolution::Factored(y),
        duals: Duals {
            y: state.y,
            z: state.z,
            mu: state.mu,
            slack: None,
        },
        report: SolveReport {
            solver: SolverKind::SdpadLr,
            objective,
            dual_objective: dobj,
            gap,
            inf,
            primal_residual: primal_res,
            dual_residual: dual_res,
            iterations,
            final_rank: rank,
            eigval_ratio: ratio,
            rank_one_ratio: one_ratio,
            converged,
            rank_insufficient,
            restarts,
            trace,
        },
    })
}
