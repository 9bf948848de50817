//! The semidefinite relaxation in operator form.
//!
//! For an MRF with `n` variables the lifted variable is the bordered matrix
//!
//! ```text
//!       ⎡ 1  xᵀ ⎤
//! X̄  =  ⎣ x  X  ⎦   of side N = 1 + Σ m_i,
//! ```
//!
//! constrained by `X̄ ⪰ 0`, a small set of linear equalities `A(X̄) = b` that
//! only touch the border and the diagonal blocks, and entrywise nonnegativity
//! `P(X̄) ≥ 0` on the off-diagonal blocks of the graph edges. The two linear
//! families have disjoint supports, which is what keeps the ADMM updates in
//! closed form.
//!
//! Equalities are ordered: the corner `X̄₀₀ = 1`, then one simplex row
//! `1ᵀx_i = 1` per variable, then for each variable its diagonal ties
//! `X_ii[s,s] = x_i[s]` followed by the zeros `X_ii[s,t] = 0` for `s < t`.

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::mrf::{Assignment, IndicatorVector, PairwiseMrf};
use crate::sparse::SymSparse;

/// What a row of `A` enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    /// `X̄[0,0] = 1`.
    Corner,
    /// `1ᵀ x_i = 1`.
    Simplex { var: usize },
    /// `X_ii[s,s] − x_i[s] = 0`.
    DiagonalTie { var: usize, state: usize },
    /// `X_ii[s,t] = 0`, `s < t`.
    OffDiagonalZero { var: usize, s: usize, t: usize },
}

/// One equality row. `terms` are `(row, col, coef)` with `row <= col`; the
/// row evaluates `Σ coef · X̄[row, col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EqConstraint {
    pub kind: ConstraintKind,
    pub terms: Vec<(usize, usize, f64)>,
}

/// Factorization of the Gram operator `AA*`, one dense Cholesky per
/// connected group of overlapping constraints.
#[derive(Debug, Clone)]
struct GramSolver {
    groups: Vec<(Vec<usize>, Cholesky<f64, Dyn>)>,
}

impl GramSolver {
    fn new(constraints: &[EqConstraint]) -> Result<Self> {
        let m = constraints.len();
        let mut by_position: HashMap<(usize, usize), Vec<(usize, f64)>> = HashMap::new();
        for (k, con) in constraints.iter().enumerate() {
            for &(r, c, coef) in &con.terms {
                by_position.entry((r, c)).or_default().push((k, coef));
            }
        }
        let mut gram: HashMap<(usize, usize), f64> = HashMap::new();
        let mut parent: Vec<usize> = (0..m).collect();
        for ((r, c), list) in &by_position {
            // ⟨A_k, A_l⟩_F: off-diagonal terms appear twice with half weight.
            let weight = if r == c { 1.0 } else { 0.5 };
            for &(k, ck) in list {
                for &(l, cl) in list {
                    *gram.entry((k, l)).or_insert(0.0) += weight * ck * cl;
                    if k != l {
                        union(&mut parent, k, l);
                    }
                }
            }
        }
        let mut members: HashMap<usize, Vec<usize>> = HashMap::new();
        for k in 0..m {
            let root = find(&mut parent, k);
            members.entry(root).or_default().push(k);
        }
        let mut roots: Vec<usize> = members.keys().copied().collect();
        roots.sort_unstable();
        let mut groups = Vec::with_capacity(roots.len());
        for root in roots {
            let idx = members.remove(&root).unwrap_or_default();
            let g = DMatrix::from_fn(idx.len(), idx.len(), |a, b| {
                gram.get(&(idx[a], idx[b])).copied().unwrap_or(0.0)
            });
            let chol = Cholesky::new(g)
                .ok_or_else(|| Error::InvalidModel("AA* is not positive definite".into()))?;
            groups.push((idx, chol));
        }
        Ok(Self { groups })
    }

    fn solve(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (idx, chol) in &self.groups {
            let rhs = DVector::from_iterator(idx.len(), idx.iter().map(|&k| v[k]));
            let sol = chol.solve(&rhs);
            for (&k, &s) in idx.iter().zip(sol.iter()) {
                out[k] = s;
            }
        }
        out
    }
}

fn find(parent: &mut [usize], mut k: usize) -> usize {
    while parent[k] != k {
        parent[k] = parent[parent[k]];
        k = parent[k];
    }
    k
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        parent[ra.max(rb)] = ra.min(rb);
    }
}

/// Slot layout of `C + A*(y) − P*(z)` on a fixed sparsity pattern, so the
/// dual matrix can be refilled every iteration without hashing.
#[derive(Debug, Clone)]
struct DualTemplate {
    rows: Vec<usize>,
    cols: Vec<usize>,
    cost: Vec<f64>,
    eq_slots: Vec<Vec<(usize, f64)>>,
    nonneg_slots: Vec<usize>,
}

/// The relaxation of one MRF, ready for the first-order solvers.
#[derive(Debug, Clone)]
pub struct SdrProblem {
    dim: usize,
    states: Vec<usize>,
    offsets: Vec<usize>,
    edges: Vec<(usize, usize)>,
    cost: SymSparse,
    constraints: Vec<EqConstraint>,
    rhs: Vec<f64>,
    nonneg: Vec<(usize, usize)>,
    gram: GramSolver,
    template: DualTemplate,
}

/// Builds the relaxation of `mrf`. `⟨cost, x̂x̂ᵀ⟩` equals the energy of any
/// assignment whose lifted indicator is `x̂ = (1, x)`.
pub fn build_sdr(mrf: &PairwiseMrf) -> Result<SdrProblem> {
    SdrProblem::new(mrf)
}

impl SdrProblem {
    pub fn new(mrf: &PairwiseMrf) -> Result<Self> {
        let dim = mrf.lifted_dim();
        let offsets = mrf.block_offsets();
        let states = mrf.states().to_vec();

        let mut cost_triplets = Vec::new();
        for (i, &off) in offsets.iter().enumerate() {
            for (s, &w) in mrf.unary(i).iter().enumerate() {
                if w != 0.0 {
                    // row and column 0 each carry w/2
                    cost_triplets.push((0, off + s, w / 2.0));
                }
            }
        }
        for (k, &(i, j)) in mrf.edges().iter().enumerate() {
            let w = mrf.pairwise(k);
            for s in 0..states[i] {
                for t in 0..states[j] {
                    let v = w[(s, t)];
                    if v != 0.0 {
                        cost_triplets.push((offsets[i] + s, offsets[j] + t, v / 2.0));
                    }
                }
            }
        }
        let cost = SymSparse::from_triplets(dim, cost_triplets);

        let mut constraints = vec![EqConstraint {
            kind: ConstraintKind::Corner,
            terms: vec![(0, 0, 1.0)],
        }];
        let mut rhs = vec![1.0];
        for (i, &off) in offsets.iter().enumerate() {
            constraints.push(EqConstraint {
                kind: ConstraintKind::Simplex { var: i },
                terms: (0..states[i]).map(|s| (0, off + s, 1.0)).collect(),
            });
            rhs.push(1.0);
        }
        for (i, &off) in offsets.iter().enumerate() {
            let m = states[i];
            for s in 0..m {
                constraints.push(EqConstraint {
                    kind: ConstraintKind::DiagonalTie { var: i, state: s },
                    terms: vec![(off + s, off + s, 1.0), (0, off + s, -1.0)],
                });
                rhs.push(0.0);
            }
            for s in 0..m {
                for t in s + 1..m {
                    constraints.push(EqConstraint {
                        kind: ConstraintKind::OffDiagonalZero { var: i, s, t },
                        terms: vec![(off + s, off + t, 1.0)],
                    });
                    rhs.push(0.0);
                }
            }
        }

        let mut nonneg = Vec::new();
        for &(i, j) in mrf.edges() {
            for s in 0..states[i] {
                for t in 0..states[j] {
                    nonneg.push((offsets[i] + s, offsets[j] + t));
                }
            }
        }

        let gram = GramSolver::new(&constraints)?;
        let template = DualTemplate::new(dim, &cost, &constraints, &nonneg);
        Ok(Self {
            dim,
            states,
            offsets,
            edges: mrf.edges().to_vec(),
            cost,
            constraints,
            rhs,
            nonneg,
            gram,
            template,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_vars(&self) -> usize {
        self.states.len()
    }

    /// The maximization objective as a sparse symmetric matrix.
    pub fn cost(&self) -> &SymSparse {
        &self.cost
    }

    pub fn constraints(&self) -> &[EqConstraint] {
        &self.constraints
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn num_eq(&self) -> usize {
        self.constraints.len()
    }

    /// Upper-triangle positions constrained to be nonnegative.
    pub fn nonneg_set(&self) -> &[(usize, usize)] {
        &self.nonneg
    }

    /// Same problem with the nonnegativity constraints dropped.
    pub fn without_nonneg(&self) -> Self {
        let mut p = self.clone();
        p.nonneg.clear();
        p.template = DualTemplate::new(p.dim, &p.cost, &p.constraints, &p.nonneg);
        p
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got,
            });
        }
        Ok(())
    }

    /// `⟨cost, X̄⟩`.
    pub fn objective(&self, x: &LiftedSolution) -> f64 {
        match x {
            LiftedSolution::Dense(m) => self.cost.inner_dense(m),
            LiftedSolution::Factored(y) => self.cost.inner_factored(y),
        }
    }

    pub fn apply_a(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check_dim(x.nrows())?;
        self.check_dim(x.ncols())?;
        Ok(self.apply_a_with(|r, c| x[(r, c)]))
    }

    /// `A(Y·Yᵀ)` without forming the product.
    pub fn apply_a_factored(&self, y: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check_dim(y.nrows())?;
        Ok(self.apply_a_with(|r, c| y.row(r).dot(&y.row(c))))
    }

    pub fn apply_a_lifted(&self, x: &LiftedSolution) -> Result<Vec<f64>> {
        match x {
            LiftedSolution::Dense(m) => self.apply_a(m),
            LiftedSolution::Factored(y) => self.apply_a_factored(y),
        }
    }

    fn apply_a_with(&self, entry: impl Fn(usize, usize) -> f64) -> Vec<f64> {
        self.constraints
            .iter()
            .map(|con| {
                con.terms
                    .iter()
                    .map(|&(r, c, coef)| coef * entry(r, c))
                    .sum()
            })
            .collect()
    }

    /// `A*(y) = Σ y_k A_k`.
    pub fn apply_a_star(&self, y: &[f64]) -> Result<SymSparse> {
        if y.len() != self.num_eq() {
            return Err(Error::DimensionMismatch {
                expected: self.num_eq(),
                got: y.len(),
            });
        }
        let triplets = self.constraints.iter().zip(y).flat_map(|(con, &yk)| {
            con.terms.iter().map(move |&(r, c, coef)| {
                if r == c {
                    (r, c, yk * coef)
                } else {
                    (r, c, yk * coef / 2.0)
                }
            })
        });
        Ok(SymSparse::from_triplets(self.dim, triplets))
    }

    /// Applies `(AA*)^{-1}` using the factorization computed at build time.
    pub fn solve_gram(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.num_eq() {
            return Err(Error::DimensionMismatch {
                expected: self.num_eq(),
                got: v.len(),
            });
        }
        Ok(self.gram.solve(v))
    }

    /// Extracts the entries of the nonnegativity set.
    pub fn apply_p(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check_dim(x.nrows())?;
        Ok(self.nonneg.iter().map(|&(r, c)| x[(r, c)]).collect())
    }

    pub fn apply_p_factored(&self, y: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check_dim(y.nrows())?;
        Ok(self
            .nonneg
            .iter()
            .map(|&(r, c)| y.row(r).dot(&y.row(c)))
            .collect())
    }

    pub fn apply_p_lifted(&self, x: &LiftedSolution) -> Result<Vec<f64>> {
        match x {
            LiftedSolution::Dense(m) => self.apply_p(m),
            LiftedSolution::Factored(y) => self.apply_p_factored(y),
        }
    }

    /// Adjoint of [`Self::apply_p`]: `z_e / 2` on both mirrored entries.
    pub fn apply_p_star(&self, z: &[f64]) -> Result<SymSparse> {
        if z.len() != self.nonneg.len() {
            return Err(Error::DimensionMismatch {
                expected: self.nonneg.len(),
                got: z.len(),
            });
        }
        Ok(SymSparse::from_triplets(
            self.dim,
            self.nonneg
                .iter()
                .zip(z)
                .map(|(&(r, c), &v)| (r, c, v / 2.0)),
        ))
    }

    /// Clamps the nonnegativity set of a dense symmetric matrix at zero.
    pub fn project_nonneg(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(x.nrows())?;
        let mut out = x.clone();
        for &(r, c) in &self.nonneg {
            if out[(r, c)] < 0.0 {
                out[(r, c)] = 0.0;
                out[(c, r)] = 0.0;
            }
        }
        Ok(out)
    }

    /// The minimization-form dual matrix `−cost + A*(y) − P*(z)`, sharing the
    /// sparsity of the graph.
    pub fn dual_matrix(&self, y: &[f64], z: &[f64]) -> Result<SymSparse> {
        if y.len() != self.num_eq() {
            return Err(Error::DimensionMismatch {
                expected: self.num_eq(),
                got: y.len(),
            });
        }
        if z.len() != self.nonneg.len() {
            return Err(Error::DimensionMismatch {
                expected: self.nonneg.len(),
                got: z.len(),
            });
        }
        let t = &self.template;
        let mut vals: Vec<f64> = t.cost.iter().map(|v| -v).collect();
        for (slots, &yk) in t.eq_slots.iter().zip(y) {
            for &(slot, coef) in slots {
                vals[slot] += yk * coef;
            }
        }
        for (&slot, &zk) in t.nonneg_slots.iter().zip(z) {
            vals[slot] -= zk / 2.0;
        }
        Ok(SymSparse::from_parts(
            self.dim,
            t.rows.clone(),
            t.cols.clone(),
            vals,
        ))
    }

    /// The lifted rank-one point `x̂x̂ᵀ` of an assignment, as a factor.
    pub fn lift_assignment(&self, a: &Assignment) -> Result<LiftedSolution> {
        let x = IndicatorVector::from_assignment(a, &self.states)?;
        let mut y = DMatrix::zeros(self.dim, 1);
        y[(0, 0)] = 1.0;
        for (k, &v) in x.values().iter().enumerate() {
            y[(k + 1, 0)] = v;
        }
        Ok(LiftedSolution::Factored(y))
    }
}

impl DualTemplate {
    fn new(
        dim: usize,
        cost: &SymSparse,
        constraints: &[EqConstraint],
        nonneg: &[(usize, usize)],
    ) -> Self {
        let mut index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut rows = Vec::new();
        let mut cols = Vec::new();
        let mut slot_of = |r: usize, c: usize, rows: &mut Vec<usize>, cols: &mut Vec<usize>| {
            *index.entry((r, c)).or_insert_with(|| {
                rows.push(r);
                cols.push(c);
                rows.len() - 1
            })
        };
        let cost_slots: Vec<(usize, f64)> = cost
            .entries()
            .map(|(r, c, v)| (slot_of(r, c, &mut rows, &mut cols), v))
            .collect();
        let eq_slots = constraints
            .iter()
            .map(|con| {
                con.terms
                    .iter()
                    .map(|&(r, c, coef)| {
                        let w = if r == c { coef } else { coef / 2.0 };
                        (slot_of(r, c, &mut rows, &mut cols), w)
                    })
                    .collect()
            })
            .collect();
        let nonneg_slots = nonneg
            .iter()
            .map(|&(r, c)| slot_of(r, c, &mut rows, &mut cols))
            .collect();
        let mut cost_vals = vec![0.0; rows.len()];
        for (slot, v) in cost_slots {
            cost_vals[slot] += v;
        }
        debug_assert!(rows.iter().all(|&r| r < dim));
        Self {
            rows,
            cols,
            cost: cost_vals,
            eq_slots,
            nonneg_slots,
        }
    }
}

/// A lifted iterate: dense, or a factor `Y` with `X̄ = Y·Yᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub enum LiftedSolution {
    Dense(DMatrix<f64>),
    Factored(DMatrix<f64>),
}

impl LiftedSolution {
    pub fn dim(&self) -> usize {
        match self {
            Self::Dense(m) => m.nrows(),
            Self::Factored(y) => y.nrows(),
        }
    }

    pub fn entry(&self, r: usize, c: usize) -> f64 {
        match self {
            Self::Dense(m) => m[(r, c)],
            Self::Factored(y) => y.row(r).dot(&y.row(c)),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Self::Dense(m) => m.clone(),
            Self::Factored(y) => y * y.transpose(),
        }
    }

    /// The border `x`, read from row 0.
    pub fn border(&self) -> Vec<f64> {
        (1..self.dim()).map(|k| self.entry(0, k)).collect()
    }

    /// The border as per-variable blocks.
    pub fn indicator(&self, states: &[usize]) -> Result<IndicatorVector> {
        IndicatorVector::new(self.border(), states.to_vec())
    }
}
