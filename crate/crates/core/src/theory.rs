//! Numerical checks of structural facts about the relaxation, the two
//! exact-recovery conditions, and seeded recovery experiments.

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigsolve::sorted_eigen;
use crate::error::{Error, Result};
use crate::mrf::PairwiseMrf;
use crate::probgen::{
    gen_labeling, gen_rotation_sync, LabelingSpec, PlantedInstance, RotationSpec,
};
use crate::refine::{round_solution, Resolver, RoundingConfig};
use crate::sdr::{build_sdr, LiftedSolution, SdrProblem};

/// Residuals of the implied marginalization identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalizationReport {
    /// `max ‖X_ij·1 − x_i‖_∞` over edges.
    pub row_residual: f64,
    /// `max ‖X_ijᵀ·1 − x_j‖_∞` over edges.
    pub col_residual: f64,
    /// `max_i ‖X̄ u_i‖₂` with `u_i = (−1, 0, …, 1_{block i}, …, 0)`.
    pub null_residual: f64,
    pub passed: bool,
}

/// Checks that every edge block of `sol` marginalizes to the border and
/// that each `u_i` is (numerically) in the null space of `X̄`.
pub fn check_marginalization(
    p: &SdrProblem,
    sol: &LiftedSolution,
    tol: f64,
) -> Result<MarginalizationReport> {
    if sol.dim() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: sol.dim(),
        });
    }
    let x = sol.to_dense();
    let offsets = p.offsets();
    let states = p.states();
    let mut row_residual: f64 = 0.0;
    let mut col_residual: f64 = 0.0;
    for &(i, j) in p.edges() {
        let (oi, oj) = (offsets[i], offsets[j]);
        for s in 0..states[i] {
            let sum: f64 = (0..states[j]).map(|t| x[(oi + s, oj + t)]).sum();
            row_residual = row_residual.max((sum - x[(0, oi + s)]).abs());
        }
        for t in 0..states[j] {
            let sum: f64 = (0..states[i]).map(|s| x[(oi + s, oj + t)]).sum();
            col_residual = col_residual.max((sum - x[(0, oj + t)]).abs());
        }
    }
    let mut null_residual: f64 = 0.0;
    for (i, &m) in states.iter().enumerate() {
        let mut u = DVector::zeros(p.dim());
        u[0] = -1.0;
        for s in 0..m {
            u[offsets[i] + s] = 1.0;
        }
        null_residual = null_residual.max((&x * u).norm());
    }
    Ok(MarginalizationReport {
        row_residual,
        col_residual,
        null_residual,
        passed: row_residual <= tol && col_residual <= tol && null_residual <= tol,
    })
}

/// A point of the `±1`-parameterized relaxation.
///
/// The map is the congruence `X̄ ↦ T·X̄·Tᵀ` with `T = [[1, 0], [−1, 2I]]`, so
/// it preserves semidefiniteness and inverts exactly. `t` is the corner
/// `X̄₀₀`, which is 1 on feasible points.
#[derive(Debug, Clone, PartialEq)]
pub struct Sdr2Solution {
    pub corner: f64,
    /// `y = 2x − t·1`.
    pub y_vec: DVector<f64>,
    /// `Y = 4X − 2(x·1ᵀ + 1·xᵀ) + t·1·1ᵀ`.
    pub y_mat: DMatrix<f64>,
    /// `w̄_i = w_i + ½(Σ_j W_ij·1 + Σ_j W_jiᵀ·1)`.
    pub wbar: Vec<Vec<f64>>,
    states: Vec<usize>,
}

/// Maps a lifted solution of `mrf`'s relaxation to the `±1` parameterization.
pub fn to_sdr2(mrf: &PairwiseMrf, sol: &LiftedSolution) -> Result<Sdr2Solution> {
    let n = mrf.lifted_dim();
    if sol.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: sol.dim(),
        });
    }
    let full = sol.to_dense();
    let x = full.view((1, 0), (n - 1, 1)).column(0).into_owned();
    let big_x = full.view((1, 1), (n - 1, n - 1)).into_owned();
    let corner = full[(0, 0)];
    let (y_vec, y_mat) = forward_map(corner, &x, &big_x);
    let mut wbar: Vec<Vec<f64>> = (0..mrf.num_vars()).map(|i| mrf.unary(i).to_vec()).collect();
    for (k, &(i, j)) in mrf.edges().iter().enumerate() {
        let w = mrf.pairwise(k);
        for (s, v) in wbar[i].iter_mut().enumerate() {
            *v += 0.5 * w.row(s).sum();
        }
        for (t, v) in wbar[j].iter_mut().enumerate() {
            *v += 0.5 * w.column(t).sum();
        }
    }
    Ok(Sdr2Solution {
        corner,
        y_vec,
        y_mat,
        wbar,
        states: mrf.states().to_vec(),
    })
}

fn forward_map(t: f64, x: &DVector<f64>, big_x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let d = x.len();
    let ones = DVector::from_element(d, 1.0);
    let y = x * 2.0 - &ones * t;
    let outer = x * ones.transpose() + &ones * x.transpose();
    let big_y = big_x * 4.0 - outer * 2.0 + &ones * ones.transpose() * t;
    (y, big_y)
}

impl Sdr2Solution {
    /// The inverse map: `x = (y + t·1)/2`, `X = (Y + 2(x·1ᵀ + 1·xᵀ) − t·1·1ᵀ)/4`.
    pub fn to_sdr(&self) -> LiftedSolution {
        let d = self.y_vec.len();
        let t = self.corner;
        let ones = DVector::from_element(d, 1.0);
        let x = (&self.y_vec + &ones * t) * 0.5;
        let outer = &x * ones.transpose() + &ones * x.transpose();
        let big_x = (&self.y_mat + outer * 2.0 - &ones * ones.transpose() * t) * 0.25;
        let mut full = DMatrix::zeros(d + 1, d + 1);
        full[(0, 0)] = t;
        full.view_mut((1, 0), (d, 1)).copy_from(&x);
        full.view_mut((0, 1), (1, d)).copy_from(&x.transpose());
        full.view_mut((1, 1), (d, d)).copy_from(&big_x);
        LiftedSolution::Dense(full)
    }

    /// `Σ ⟨w̄_i, y_i⟩ + ½ Σ_{(i,j)} ⟨W_ij, Y_ij⟩`.
    ///
    /// For any feasible point this equals `2·⟨cost, X̄⟩ + κ` with
    /// `κ = −Σ 1ᵀw_i − ½ Σ 1ᵀW_ij 1`, see [`sdr2_offset`].
    pub fn objective(&self, mrf: &PairwiseMrf) -> f64 {
        let offsets = block_offsets(&self.states);
        let mut total = 0.0;
        for (i, w) in self.wbar.iter().enumerate() {
            total += w
                .iter()
                .enumerate()
                .map(|(s, v)| v * self.y_vec[offsets[i] + s])
                .sum::<f64>();
        }
        for (k, &(i, j)) in mrf.edges().iter().enumerate() {
            let w = mrf.pairwise(k);
            for s in 0..self.states[i] {
                for t in 0..self.states[j] {
                    total += 0.5 * w[(s, t)] * self.y_mat[(offsets[i] + s, offsets[j] + t)];
                }
            }
        }
        total
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }
}

/// The constant `κ` in `objective₂ = 2·objective + κ`.
pub fn sdr2_offset(mrf: &PairwiseMrf) -> f64 {
    let unary: f64 = (0..mrf.num_vars())
        .map(|i| mrf.unary(i).iter().sum::<f64>())
        .sum();
    let pairwise: f64 = (0..mrf.edges().len()).map(|k| mrf.pairwise(k).sum()).sum();
    -unary - 0.5 * pairwise
}

fn block_offsets(states: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(states.len());
    let mut acc = 0;
    for &m in states {
        out.push(acc);
        acc += m;
    }
    out
}

/// Constraint residuals of an [`Sdr2Solution`]. Residuals of the linear
/// constraints are absolute; `psd` is `max(0, −λ_min)` of the bordered
/// matrix relative to `1 + ‖·‖_F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sdr2Report {
    pub psd: f64,
    /// `max_i |1ᵀy_i − (2 − m_i)|`.
    pub block_sum: f64,
    /// Largest violation of `Y_ij + 1·y_jᵀ + y_i·1ᵀ + 1·1ᵀ ≥ 0` over edges.
    pub shifted_nonneg: f64,
    /// `max |(1·1ᵀ + y_i·1ᵀ + 1·y_iᵀ + Y_ii)/2 − Diag(1 + y_i)|`.
    pub diagonal_block: f64,
    /// `max |diag(Y_ii) − 1|`.
    pub unit_diagonal: f64,
    pub passed: bool,
}

/// Residual scale of the map: a violation `t` of a constraint of the source
/// becomes at most `SDR2_SCALE · t` after mapping.
pub const SDR2_SCALE: f64 = 4.0;

/// Checks every constraint of the `±1` relaxation against `SDR2_SCALE · tol`.
pub fn check_sdr2_feasibility(
    s2: &Sdr2Solution,
    mrf: &PairwiseMrf,
    tol: f64,
) -> Result<Sdr2Report> {
    if s2.states != mrf.states() {
        return Err(Error::InvalidModel(
            "solution does not belong to this model".into(),
        ));
    }
    let d = s2.y_vec.len();
    let offsets = block_offsets(&s2.states);
    let mut bordered = DMatrix::zeros(d + 1, d + 1);
    bordered[(0, 0)] = s2.corner;
    bordered.view_mut((1, 0), (d, 1)).copy_from(&s2.y_vec);
    bordered
        .view_mut((0, 1), (1, d))
        .copy_from(&s2.y_vec.transpose());
    bordered.view_mut((1, 1), (d, d)).copy_from(&s2.y_mat);
    let scale = 1.0 + bordered.norm();
    let (eigs, _) = sorted_eigen(bordered)?;
    let psd = (-eigs.last().copied().unwrap_or(0.0)).max(0.0) / scale;

    let mut block_sum: f64 = 0.0;
    let mut diagonal_block: f64 = 0.0;
    let mut unit_diagonal: f64 = 0.0;
    for (i, &m) in s2.states.iter().enumerate() {
        let o = offsets[i];
        let sum: f64 = (0..m).map(|s| s2.y_vec[o + s]).sum();
        block_sum = block_sum.max((sum - (2.0 - m as f64)).abs());
        for s in 0..m {
            unit_diagonal = unit_diagonal.max((s2.y_mat[(o + s, o + s)] - 1.0).abs());
            for t in 0..m {
                let lhs =
                    (1.0 + s2.y_vec[o + s] + s2.y_vec[o + t] + s2.y_mat[(o + s, o + t)]) / 2.0;
                let rhs = if s == t { 1.0 + s2.y_vec[o + s] } else { 0.0 };
                diagonal_block = diagonal_block.max((lhs - rhs).abs());
            }
        }
    }
    let mut shifted_nonneg: f64 = 0.0;
    for &(i, j) in mrf.edges() {
        let (oi, oj) = (offsets[i], offsets[j]);
        for s in 0..s2.states[i] {
            for t in 0..s2.states[j] {
                let v = s2.y_mat[(oi + s, oj + t)] + s2.y_vec[oj + t] + s2.y_vec[oi + s] + 1.0;
                shifted_nonneg = shifted_nonneg.max(-v);
            }
        }
    }
    let limit = SDR2_SCALE * tol;
    Ok(Sdr2Report {
        psd,
        block_sum,
        shifted_nonneg,
        diagonal_block,
        unit_diagonal,
        passed: psd <= limit
            && block_sum <= limit
            && shifted_nonneg <= limit
            && diagonal_block <= limit
            && unit_diagonal <= limit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Labeling,
    Rotation,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CertificateDetails {
    /// Algebraic connectivity of the correct-edge graph.
    pub lambda2: Option<f64>,
    pub d_inf: Option<f64>,
    pub p_false_bound: Option<f64>,
    pub sampling_ok: Option<bool>,
}

/// Outcome of a sufficient condition for exact recovery.
/// `satisfied` holds exactly when `margin > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryCertificate {
    pub scenario: Scenario,
    pub satisfied: bool,
    pub margin: f64,
    pub details: CertificateDetails,
}

/// Second-smallest Laplacian eigenvalue of the graph on `n` nodes; zero for
/// `n < 2`.
pub fn algebraic_connectivity(n: usize, edges: &[(usize, usize)]) -> Result<f64> {
    if n < 2 {
        return Ok(0.0);
    }
    let mut lap = DMatrix::zeros(n, n);
    for &(i, j) in edges {
        if i >= n || j >= n || i == j {
            return Err(Error::InvalidModel(format!("bad edge ({i}, {j})")));
        }
        lap[(i, i)] += 1.0;
        lap[(j, j)] += 1.0;
        lap[(i, j)] -= 1.0;
        lap[(j, i)] -= 1.0;
    }
    let (eigs, _) = sorted_eigen(lap)?;
    Ok(eigs[n - 2].max(0.0))
}

/// The labeling condition `λ₂(G_true) > 2‖d‖_∞` with
/// `d_i = −w_i + Σ_{j : (i,j) ∈ G_false} W_ij·1`, taking `W_ji = W_ijᵀ`.
pub fn labeling_condition(inst: &PlantedInstance) -> Result<RecoveryCertificate> {
    let mrf = &inst.mrf;
    let mut d: Vec<Vec<f64>> = (0..mrf.num_vars())
        .map(|i| mrf.unary(i).iter().map(|v| -v).collect())
        .collect();
    for &(i, j) in &inst.false_edges {
        let k = mrf
            .edge_index(i, j)
            .ok_or_else(|| Error::InvalidModel(format!("false edge ({i}, {j}) not in model")))?;
        let w = mrf.pairwise(k);
        for (s, v) in d[i].iter_mut().enumerate() {
            *v += w.row(s).sum();
        }
        for (t, v) in d[j].iter_mut().enumerate() {
            *v += w.column(t).sum();
        }
    }
    let d_inf = d.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let lambda2 = algebraic_connectivity(mrf.num_vars(), &inst.true_edges)?;
    let margin = lambda2 - 2.0 * d_inf;
    Ok(RecoveryCertificate {
        scenario: Scenario::Labeling,
        satisfied: margin > 0.0,
        margin,
        details: CertificateDetails {
            lambda2: Some(lambda2),
            d_inf: Some(d_inf),
            ..Default::default()
        },
    })
}

/// Default `δ` of the rotation bound.
pub const DEFAULT_DELTA: f64 = 0.05;
/// Default constant of the sampling condition; the true constant is unknown,
/// so this is only a heuristic.
pub const DEFAULT_SAMPLING_C: f64 = 1.0;

/// `(1 − δ)/(1 + δ) · 2/(3 − 1/m)`.
pub fn rotation_bound(m: usize, delta: f64) -> Result<f64> {
    if m < 2 {
        return Err(Error::InvalidConfig("rotation bound needs m >= 2".into()));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::InvalidConfig(format!(
            "delta must lie in [0, 1], got {delta}"
        )));
    }
    Ok((1.0 - delta) / (1.0 + delta) * 2.0 / (3.0 - 1.0 / m as f64))
}

/// `p_false · p_obs / m > c · ln(m n) / n`.
pub fn sampling_ok(n: usize, m: usize, p_obs: f64, p_false: f64, c: f64) -> bool {
    sampling_slack(n, m, p_obs, p_false, c) > 0.0
}

fn sampling_slack(n: usize, m: usize, p_obs: f64, p_false: f64, c: f64) -> f64 {
    let (n, m) = (n as f64, m as f64);
    p_false * p_obs / m - c * (m * n).ln() / n
}

/// Both rotation conditions; the margin is the smaller of the two slacks.
pub fn rotation_condition(spec: &RotationSpec, delta: f64, c: f64) -> Result<RecoveryCertificate> {
    let bound = rotation_bound(spec.m, delta)?;
    let sampling = sampling_slack(spec.n, spec.m, spec.p_obs, spec.p_false, c);
    let margin = (bound - spec.p_false).min(sampling);
    Ok(RecoveryCertificate {
        scenario: Scenario::Rotation,
        satisfied: margin > 0.0,
        margin,
        details: CertificateDetails {
            p_false_bound: Some(bound),
            sampling_ok: Some(sampling > 0.0),
            ..Default::default()
        },
    })
}

/// Planted-model family for [`recovery_experiment`]. The `seed` inside is
/// replaced per trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "scenario")]
pub enum GenSpec {
    Labeling(LabelingSpec),
    Rotation(RotationSpec),
}

impl GenSpec {
    pub fn generate(&self, seed: u64) -> Result<PlantedInstance> {
        match self {
            Self::Labeling(s) => gen_labeling(&LabelingSpec { seed, ..s.clone() }),
            Self::Rotation(s) => gen_rotation_sync(&RotationSpec { seed, ..s.clone() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub seed: u64,
    pub recovered: bool,
    pub converged: bool,
    pub rounded_energy: Option<f64>,
    pub planted_energy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryStats {
    pub trials: usize,
    pub successes: usize,
    pub rate: f64,
    pub outcomes: Vec<TrialOutcome>,
}

/// Seed of trial `t` under `master`.
pub fn trial_seed(master: u64, t: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(t as u64);
    rng.next_u64()
}

/// Generates, solves and rounds `trials` planted instances in parallel and
/// reports how often the planted assignment came back. Errors count as
/// failures.
pub fn recovery_experiment(
    spec: &GenSpec,
    trials: usize,
    master_seed: u64,
    resolver: &Resolver,
    rounding: &RoundingConfig,
) -> RecoveryStats {
    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|t| run_trial(spec, trial_seed(master_seed, t), resolver, rounding))
        .collect();
    let successes = outcomes.iter().filter(|o| o.recovered).count();
    RecoveryStats {
        trials,
        successes,
        rate: if trials == 0 {
            0.0
        } else {
            successes as f64 / trials as f64
        },
        outcomes,
    }
}

fn run_trial(
    spec: &GenSpec,
    seed: u64,
    resolver: &Resolver,
    rounding: &RoundingConfig,
) -> TrialOutcome {
    let attempt = || -> Result<(bool, bool, f64, f64)> {
        let inst = spec.generate(seed)?;
        let p = build_sdr(&inst.mrf)?;
        let out = resolver.kind.solve(&p, &resolver.config)?;
        let r = round_solution(&p, &inst.mrf, &out.solution, rounding, resolver)?;
        let planted = inst.mrf.energy(&inst.ground_truth)?;
        Ok((
            inst.recovered(&r.assignment),
            out.report.converged,
            r.energy,
            planted,
        ))
    };
    match attempt() {
        Ok((recovered, converged, e, planted)) => TrialOutcome {
            seed,
            recovered,
            converged,
            rounded_energy: Some(e),
            planted_energy: Some(planted),
            error: None,
        },
        Err(e) => TrialOutcome {
            seed,
            recovered: false,
            converged: false,
            rounded_energy: None,
            planted_energy: None,
            error: Some(e.to_string()),
        },
    }
}
