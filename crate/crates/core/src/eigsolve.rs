//! Partial symmetric eigensolves for the low-rank projection step.
//!
//! [`lanczos_top`] runs a thick-restart Lanczos process with full
//! reorthogonalization against an implicitly defined operator. It keeps both
//! the Krylov basis `Q` and its image `M·Q`, so Ritz residuals are measured
//! explicitly rather than inferred from the three-term recurrence.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::sparse::SymSparse;

/// A symmetric linear map available only through products.
pub trait SymOperator {
    fn dim(&self) -> usize;
    /// `out = M · u`.
    fn apply(&self, u: &[f64], out: &mut [f64]);
}

impl SymOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, u: &[f64], out: &mut [f64]) {
        let v = self * DVector::from_column_slice(u);
        out.copy_from_slice(v.as_slice());
    }
}

impl SymOperator for SymSparse {
    fn dim(&self) -> usize {
        SymSparse::dim(self)
    }

    fn apply(&self, u: &[f64], out: &mut [f64]) {
        self.matvec_into(u, out)
    }
}

/// `M = Y·Yᵀ + scale · S`, with `Y` tall and thin and `S` sparse.
///
/// In the low-rank solver this is `V = Y·Yᵀ − (C + A*(y) − P*(z))/μ`; one
/// product costs `O(N·r + nnz(S))`.
#[derive(Debug, Clone, Copy)]
pub struct ImplicitSymMatrix<'a> {
    pub factor: Option<&'a DMatrix<f64>>,
    pub sparse: &'a SymSparse,
    pub sparse_scale: f64,
}

impl SymOperator for ImplicitSymMatrix<'_> {
    fn dim(&self) -> usize {
        self.sparse.dim()
    }

    fn apply(&self, u: &[f64], out: &mut [f64]) {
        self.sparse.matvec_into(u, out);
        if self.sparse_scale != 1.0 {
            out.iter_mut().for_each(|o| *o *= self.sparse_scale);
        }
        if let Some(y) = self.factor {
            let n = y.nrows();
            for k in 0..y.ncols() {
                let col = y.column(k);
                let coef: f64 = col.iter().zip(u).map(|(a, b)| a * b).sum();
                if coef != 0.0 {
                    for (o, &c) in out.iter_mut().zip(col.iter()).take(n) {
                        *o += coef * c;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LanczosOptions {
    /// Residual tolerance, relative to `max(1, max_k |θ_k|)` over the Ritz values.
    pub tol: f64,
    /// Restart cycles allowed; `None` means `max(8r, 60)`.
    pub max_restarts: Option<usize>,
    /// Krylov space size; `None` means `min(N, max(2r + 10, 30))`.
    pub krylov_dim: Option<usize>,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_restarts: None,
            krylov_dim: None,
            seed: 0,
        }
    }
}

/// Top eigenpairs in descending order; `vectors` has orthonormal columns.
#[derive(Debug, Clone)]
pub struct EigResult {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
    pub restarts: usize,
    pub max_residual: f64,
}

/// The `r` algebraically largest eigenpairs of `op`.
pub fn lanczos_top(op: &impl SymOperator, r: usize, opts: &LanczosOptions) -> Result<EigResult> {
    lanczos_top_warm(op, r, opts, None)
}

/// As [`lanczos_top`], seeding the search space with the columns of `start`
/// (e.g. the previous iterate's eigenvectors).
pub fn lanczos_top_warm(
    op: &impl SymOperator,
    r: usize,
    opts: &LanczosOptions,
    start: Option<&DMatrix<f64>>,
) -> Result<EigResult> {
    let n = op.dim();
    if r == 0 || r >= n {
        return Err(Error::InvalidConfig(format!(
            "need 1 <= r < N for a partial eigensolve, got r = {r}, N = {n}"
        )));
    }
    let kdim = opts
        .krylov_dim
        .unwrap_or_else(|| (2 * r + 10).max(30))
        .clamp(r + 1, n);
    let keep = (r + (kdim - r) / 2).min(kdim - 1);
    let max_restarts = opts.max_restarts.unwrap_or((8 * r).max(60));
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut q = DMatrix::<f64>::zeros(n, kdim);
    let mut w = DMatrix::<f64>::zeros(n, kdim);
    let mut filled = 0;
    let mut pending: Vec<Vec<f64>> = Vec::new();
    if let Some(s) = start {
        for k in (0..s.ncols()).rev() {
            pending.push(s.column(k).iter().copied().collect());
        }
    }
    let mut candidate = pending.pop().unwrap_or_else(|| random_vector(n, &mut rng));
    let mut mq = vec![0.0; n];
    let mut best_residual = f64::INFINITY;

    for restart in 0..=max_restarts {
        while filled < kdim {
            let before = norm(&candidate).max(f64::MIN_POSITIVE);
            orthogonalize(&mut candidate, &q, filled);
            let mut nrm = norm(&candidate);
            if nrm <= 1e-10 * before || !nrm.is_finite() {
                // invariant subspace reached; continue from a fresh direction
                candidate = random_vector(n, &mut rng);
                orthogonalize(&mut candidate, &q, filled);
                nrm = norm(&candidate);
                if nrm <= 1e-10 {
                    break;
                }
            }
            candidate.iter_mut().for_each(|v| *v /= nrm);
            q.column_mut(filled).copy_from_slice(&candidate);
            op.apply(&candidate, &mut mq);
            w.column_mut(filled).copy_from_slice(&mq);
            filled += 1;
            candidate = pending.pop().unwrap_or_else(|| mq.clone());
        }

        let qj = q.columns(0, filled);
        let wj = w.columns(0, filled);
        let h = qj.transpose() * wj;
        let h = (&h + h.transpose()) * 0.5;
        let (theta, s) = sorted_eigen(h)?;
        let take = r.min(filled);
        let s_r = s.columns(0, take).into_owned();
        let x = &qj * &s_r;
        let mx = &wj * &s_r;
        let scale = theta.iter().fold(1.0f64, |a, t| a.max(t.abs()));
        let mut residuals = Vec::with_capacity(take);
        let mut first_unconverged = None;
        for k in 0..take {
            let res = (mx.column(k) - x.column(k) * theta[k]).norm();
            // a pair that is certainly below zero is clamped away by every caller
            let settled = res <= opts.tol * scale || theta[k] + res < 0.0;
            if !settled && first_unconverged.is_none() {
                first_unconverged = Some(k);
            }
            residuals.push(res);
        }
        let worst = residuals.iter().copied().fold(0.0, f64::max);
        best_residual = best_residual.min(worst);
        let exhausted = filled == n;
        if take == r && (first_unconverged.is_none() || exhausted) {
            return Ok(EigResult {
                values: theta[..r].to_vec(),
                vectors: x,
                restarts: restart,
                max_residual: worst,
            });
        }
        if restart == max_restarts {
            break;
        }

        let p = keep.min(filled);
        let s_p = s.columns(0, p).into_owned();
        let new_q = &qj * &s_p;
        let new_w = &wj * &s_p;
        q.columns_mut(0, p).copy_from(&new_q);
        w.columns_mut(0, p).copy_from(&new_w);
        filled = p;
        candidate = match first_unconverged {
            Some(k) if k < take => (mx.column(k) - x.column(k) * theta[k])
                .iter()
                .copied()
                .collect(),
            _ => random_vector(n, &mut rng),
        };
    }
    Err(Error::EigenNotConverged {
        iterations: max_restarts,
        residual: best_residual,
    })
}

/// Result of [`psd_truncate`]: `Y = U · max(Σ, 0)^{1/2}` over the top `r`.
#[derive(Debug, Clone)]
pub struct PsdTruncation {
    /// `N × k` factor, `k >= 1`; a single zero column when nothing survived.
    pub factor: DMatrix<f64>,
    /// The top-`r` eigenvalues, descending, before clamping.
    pub eigenvalues: Vec<f64>,
    /// The corresponding eigenvectors.
    pub eigenvectors: DMatrix<f64>,
    /// Number of retained (positive) eigenvalues.
    pub rank: usize,
    /// Set when every top-`r` eigenvalue was `<= 0`.
    pub is_zero: bool,
}

/// Eigenvalues at or below this are treated as zero by the PSD projections.
pub const EIG_ZERO_TOL: f64 = 1e-12;

/// Best PSD approximation of rank at most `r` within the computed subspace.
pub fn psd_truncate(
    op: &impl SymOperator,
    r: usize,
    opts: &LanczosOptions,
    start: Option<&DMatrix<f64>>,
) -> Result<PsdTruncation> {
    let eig = lanczos_top_warm(op, r, opts, start)?;
    Ok(truncation_from_pairs(eig.values, eig.vectors))
}

/// Same contract as [`psd_truncate`] for an explicit matrix, via a full
/// dense eigendecomposition. Used when `r >= N`.
pub fn psd_truncate_dense(m: &DMatrix<f64>, r: usize) -> Result<PsdTruncation> {
    let (vals, vecs) = sorted_eigen(m.clone())?;
    let r = r.min(vals.len());
    Ok(truncation_from_pairs(
        vals[..r].to_vec(),
        vecs.columns(0, r).into_owned(),
    ))
}

fn truncation_from_pairs(values: Vec<f64>, vectors: DMatrix<f64>) -> PsdTruncation {
    let n = vectors.nrows();
    let rank = values.iter().take_while(|&&v| v > EIG_ZERO_TOL).count();
    let factor = if rank == 0 {
        DMatrix::zeros(n, 1)
    } else {
        let mut f = vectors.columns(0, rank).into_owned();
        for (k, mut col) in f.column_iter_mut().enumerate() {
            col *= values[k].sqrt();
        }
        f
    };
    PsdTruncation {
        factor,
        eigenvalues: values,
        eigenvectors: vectors,
        rank,
        is_zero: rank == 0,
    }
}

/// Full projection of a dense symmetric matrix onto the PSD cone. Returns the
/// projection and all eigenvalues in descending order.
pub fn psd_project_dense(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (vals, vecs) = sorted_eigen(m.clone())?;
    let rank = vals.iter().take_while(|&&v| v > EIG_ZERO_TOL).count();
    let mut f = vecs.columns(0, rank).into_owned();
    for (k, mut col) in f.column_iter_mut().enumerate() {
        col *= vals[k].sqrt();
    }
    Ok((&f * f.transpose(), vals))
}

/// Dense symmetric eigendecomposition sorted by descending eigenvalue.
pub fn sorted_eigen(m: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if n == 0 {
        return Ok((Vec::new(), DMatrix::zeros(0, 0)));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenFailed("matrix has non-finite entries".into()));
    }
    let f = faer::Mat::<f64>::from_fn(n, n, |r, c| m[(r, c)]);
    let eig = f
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::EigenFailed(format!("{e:?} (n = {n})")))?;
    let s = eig.S().column_vector();
    let u = eig.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let values = order.iter().map(|&k| s[k]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| u[(r, order[c])]);
    Ok((values, vectors))
}

fn random_vector(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Classical Gram-Schmidt, applied twice.
fn orthogonalize(v: &mut [f64], q: &DMatrix<f64>, cols: usize) {
    for _ in 0..2 {
        for k in 0..cols {
            let col = q.column(k);
            let d: f64 = col.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            for (x, &c) in v.iter_mut().zip(col.iter()) {
                *x -= d * c;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_top_two() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 3.0, 1.0]));
        let e = lanczos_top(&m, 2, &LanczosOptions::default()).unwrap();
        assert!((e.values[0] - 5.0).abs() < 1e-12);
        assert!((e.values[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn identity_gives_orthonormal_basis() {
        let m = DMatrix::<f64>::identity(10, 10);
        let e = lanczos_top(&m, 3, &LanczosOptions::default()).unwrap();
        for v in &e.values {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let gram = e.vectors.transpose() * &e.vectors;
        assert!((gram - DMatrix::<f64>::identity(3, 3)).norm() < 1e-10);
    }

    #[test]
    fn rank_bounds_checked() {
        let m = DMatrix::<f64>::identity(3, 3);
        assert!(lanczos_top(&m, 0, &LanczosOptions::default()).is_err());
        assert!(lanczos_top(&m, 3, &LanczosOptions::default()).is_err());
    }

    #[test]
    fn non_convergence_reports_residual() {
        let n = 120;
        let m = DMatrix::from_fn(n, n, |r, c| {
            ((r * 7 + c * 7) % 13) as f64 + if r == c { r as f64 * 1e-3 } else { 0.0 }
        });
        let opts = LanczosOptions {
            tol: 1e-15,
            max_restarts: Some(0),
            krylov_dim: Some(6),
            seed: 1,
        };
        match lanczos_top(&m, 4, &opts) {
            Err(Error::EigenNotConverged { residual, .. }) => assert!(residual.is_finite()),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn clamp_rule() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -1.0]));
        let t = psd_truncate_dense(&m, 2).unwrap();
        let rec = &t.factor * t.factor.transpose();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]));
        assert!((rec - expected).norm() < 1e-12);
        assert_eq!(t.rank, 1);
    }

    #[test]
    fn negative_definite_is_zero() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0, -3.0, -4.0]));
        let t = psd_truncate(&m, 2, &LanczosOptions::default(), None).unwrap();
        assert!(t.is_zero);
        assert_eq!(t.rank, 0);
        assert_eq!(t.factor.norm(), 0.0);
    }

    #[test]
    fn implicit_matvec_is_linear_and_symmetric() {
        let y = DMatrix::from_fn(6, 2, |r, c| (r as f64 - c as f64) * 0.3);
        let s = SymSparse::from_triplets(6, [(0, 0, 1.0), (0, 3, -2.0), (2, 5, 0.5), (4, 4, 3.0)]);
        let op = ImplicitSymMatrix {
            factor: Some(&y),
            sparse: &s,
            sparse_scale: -0.5,
        };
        let dense = &y * y.transpose() - s.to_dense() * 0.5;
        let u: Vec<f64> = (0..6).map(|k| (k as f64).sin()).collect();
        let mut out = vec![0.0; 6];
        op.apply(&u, &mut out);
        let expected = &dense * DVector::from_column_slice(&u);
        for (a, b) in out.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn random_sym(n: usize, seed: u64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        (&a + a.transpose()) * 0.5
    }

    #[test]
    fn random_top_eigenvalues_match_dense() {
        for seed in 0..5 {
            let m = random_sym(80, seed);
            let (dense, _) = sorted_eigen(m.clone()).unwrap();
            let e = lanczos_top(&m, 6, &LanczosOptions::default()).unwrap();
            for (a, b) in e.values.iter().zip(&dense) {
                assert!((a - b).abs() < 1e-8, "seed {seed}: {a} vs {b}");
            }
            let resid = &m * &e.vectors
                - &e.vectors * DMatrix::from_diagonal(&DVector::from_vec(e.values.clone()));
            assert!(resid.norm() < 1e-6);
        }
    }

    #[test]
    fn planted_rank_one_is_reconstructed() {
        let v = DVector::from_fn(40, |k, _| (k as f64 * 0.37).cos());
        let m = &v * v.transpose();
        let t = psd_truncate(&m, 3, &LanczosOptions::default(), None).unwrap();
        assert_eq!(t.rank, 1);
        assert!((&t.factor * t.factor.transpose() - &m).norm() < 1e-8);
    }

    #[test]
    fn warm_start_agrees_with_cold() {
        let m = random_sym(60, 9);
        let opts = LanczosOptions::default();
        let cold = lanczos_top(&m, 4, &opts).unwrap();
        let warm = lanczos_top_warm(&m, 4, &opts, Some(&cold.vectors)).unwrap();
        for (a, b) in cold.values.iter().zip(&warm.values) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}
