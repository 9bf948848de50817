//! Pairwise Markov random fields, assignments and the exhaustive MAP oracle.
//!
//! The energy of an assignment `a` is
//!
//! ```text
//! f(a) = Σ_i w_i(a_i) + Σ_{(i,j) ∈ E} W_ij(a_i, a_j)
//! ```
//!
//! and MAP inference *maximizes* it. States are 0-based throughout the crate.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on `Π m_i` for [`brute_force_map`].
pub const DEFAULT_ORACLE_CAP: u64 = 10_000_000;

/// A pairwise discrete MRF with heterogeneous state counts.
///
/// Immutable once built; edges are kept sorted with `i < j` and the potential
/// `W_ij` is an `m_i × m_j` table whose rows index the state of `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseMrf {
    states: Vec<usize>,
    unary: Vec<Vec<f64>>,
    edges: Vec<(usize, usize)>,
    pairwise: Vec<DMatrix<f64>>,
}

/// Accumulating builder; repeated potentials on the same scope are summed.
#[derive(Debug, Clone, Default)]
pub struct MrfBuilder {
    states: Vec<usize>,
    unary: Vec<Vec<f64>>,
    pairwise: std::collections::BTreeMap<(usize, usize), DMatrix<f64>>,
}

impl MrfBuilder {
    pub fn new(states: Vec<usize>) -> Self {
        let unary = states.iter().map(|&m| vec![0.0; m]).collect();
        Self {
            states,
            unary,
            pairwise: Default::default(),
        }
    }

    pub fn add_unary(&mut self, i: usize, w: &[f64]) -> Result<&mut Self> {
        let m = *self
            .states
            .get(i)
            .ok_or_else(|| Error::InvalidModel(format!("unary on unknown variable {i}")))?;
        if w.len() != m {
            return Err(Error::InvalidModel(format!(
                "unary for variable {i} has length {}, expected {m}",
                w.len()
            )));
        }
        for (acc, v) in self.unary[i].iter_mut().zip(w) {
            *acc += v;
        }
        Ok(self)
    }

    /// Adds `table` (rows = states of `i`, columns = states of `j`) to edge
    /// `{i, j}`. Either orientation is accepted; it is transposed as needed.
    pub fn add_pairwise(&mut self, i: usize, j: usize, table: &DMatrix<f64>) -> Result<&mut Self> {
        let n = self.states.len();
        if i >= n || j >= n || i == j {
            return Err(Error::InvalidModel(format!("invalid edge ({i}, {j})")));
        }
        if table.nrows() != self.states[i] || table.ncols() != self.states[j] {
            return Err(Error::InvalidModel(format!(
                "pairwise table for ({i}, {j}) is {}x{}, expected {}x{}",
                table.nrows(),
                table.ncols(),
                self.states[i],
                self.states[j]
            )));
        }
        let (key, oriented) = if i < j {
            ((i, j), table.clone())
        } else {
            ((j, i), table.transpose())
        };
        self.pairwise
            .entry(key)
            .and_modify(|acc| *acc += &oriented)
            .or_insert(oriented);
        Ok(self)
    }

    pub fn build(self) -> Result<PairwiseMrf> {
        let (edges, pairwise) = self.pairwise.into_iter().unzip();
        PairwiseMrf::new(self.states, self.unary, edges, pairwise)
    }
}

impl PairwiseMrf {
    /// Validates and builds a model. `edges[k]` must satisfy `i < j`, be
    /// unique, and `pairwise[k]` must be `m_i × m_j`.
    pub fn new(
        states: Vec<usize>,
        unary: Vec<Vec<f64>>,
        edges: Vec<(usize, usize)>,
        pairwise: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = states.len();
        if let Some(i) = states.iter().position(|&m| m == 0) {
            return Err(Error::InvalidModel(format!("variable {i} has no states")));
        }
        if unary.len() != n {
            return Err(Error::InvalidModel(format!(
                "{} unary vectors for {n} variables",
                unary.len()
            )));
        }
        for (i, (w, &m)) in unary.iter().zip(&states).enumerate() {
            if w.len() != m {
                return Err(Error::InvalidModel(format!(
                    "unary for variable {i} has length {}, expected {m}",
                    w.len()
                )));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "non-finite unary on variable {i}"
                )));
            }
        }
        if edges.len() != pairwise.len() {
            return Err(Error::InvalidModel(
                "edge and potential counts differ".into(),
            ));
        }
        let mut order: Vec<usize> = (0..edges.len()).collect();
        order.sort_by_key(|&k| edges[k]);
        let mut sorted_edges = Vec::with_capacity(edges.len());
        let mut sorted_pairwise = Vec::with_capacity(edges.len());
        for k in order {
            let (i, j) = edges[k];
            if i >= j || j >= n {
                return Err(Error::InvalidModel(format!("invalid edge ({i}, {j})")));
            }
            if sorted_edges.last() == Some(&(i, j)) {
                return Err(Error::InvalidModel(format!("duplicate edge ({i}, {j})")));
            }
            let w = &pairwise[k];
            if w.nrows() != states[i] || w.ncols() != states[j] {
                return Err(Error::InvalidModel(format!(
                    "pairwise table for ({i}, {j}) is {}x{}, expected {}x{}",
                    w.nrows(),
                    w.ncols(),
                    states[i],
                    states[j]
                )));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "non-finite potential on edge ({i}, {j})"
                )));
            }
            sorted_edges.push((i, j));
            sorted_pairwise.push(w.clone());
        }
        Ok(Self {
            states,
            unary,
            edges: sorted_edges,
            pairwise: sorted_pairwise,
        })
    }

    /// Model with `n` variables of `m` states each and all potentials zero.
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            states: vec![m; n],
            unary: vec![vec![0.0; m]; n],
            edges: Vec::new(),
            pairwise: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn unary(&self, i: usize) -> &[f64] {
        &self.unary[i]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Potential table of the `k`-th edge in [`Self::edges`] order.
    pub fn pairwise(&self, k: usize) -> &DMatrix<f64> {
        &self.pairwise[k]
    }

    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        let key = if i < j { (i, j) } else { (j, i) };
        self.edges.binary_search(&key).ok()
    }

    /// `1 + Σ m_i`, the side length of the lifted matrix.
    pub fn lifted_dim(&self) -> usize {
        1 + self.states.iter().sum::<usize>()
    }

    /// Offset of each variable's block inside the lifted vector `(1, x)`.
    pub fn block_offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.states.len());
        let mut acc = 1;
        for &m in &self.states {
            off.push(acc);
            acc += m;
        }
        off
    }

    /// Number of joint configurations, as a float to avoid overflow.
    pub fn state_space_size(&self) -> f64 {
        self.states.iter().map(|&m| m as f64).product()
    }

    /// Returns `Σ_i w_i(a_i) + Σ_E W_ij(a_i, a_j)`, unaries first then edges
    /// in sorted order.
    pub fn energy(&self, a: &Assignment) -> Result<f64> {
        a.validate_for(self)?;
        Ok(self.energy_unchecked(a.as_slice()))
    }

    fn energy_unchecked(&self, a: &[usize]) -> f64 {
        let mut total = 0.0;
        for (w, &s) in self.unary.iter().zip(a) {
            total += w[s];
        }
        for (&(i, j), w) in self.edges.iter().zip(&self.pairwise) {
            total += w[(a[i], a[j])];
        }
        total
    }

    /// Negates every potential, turning a minimization model into the
    /// maximization convention used internally.
    pub fn negated(&self) -> Self {
        Self {
            states: self.states.clone(),
            unary: self
                .unary
                .iter()
                .map(|w| w.iter().map(|v| -v).collect())
                .collect(),
            edges: self.edges.clone(),
            pairwise: self.pairwise.iter().map(|w| -w).collect(),
        }
    }

    /// Fixes the variables with `Some(state)` and folds their potentials into
    /// the remaining ones.
    ///
    /// For every completion `b` of the free variables,
    /// `original.energy(merge(fixed, b)) == reduced.energy(b) + constant`.
    pub fn condition(&self, fixed: &[Option<usize>]) -> Result<Conditioned> {
        if fixed.len() != self.num_vars() {
            return Err(Error::DimensionMismatch {
                expected: self.num_vars(),
                got: fixed.len(),
            });
        }
        for (i, f) in fixed.iter().enumerate() {
            if let Some(s) = *f {
                if s >= self.states[i] {
                    return Err(Error::InvalidAssignment(format!(
                        "state {s} out of range for variable {i}"
                    )));
                }
            }
        }
        let free: Vec<usize> = (0..self.num_vars())
            .filter(|&i| fixed[i].is_none())
            .collect();
        let mut new_index = vec![usize::MAX; self.num_vars()];
        for (k, &i) in free.iter().enumerate() {
            new_index[i] = k;
        }

        let mut constant = 0.0;
        let mut unary: Vec<Vec<f64>> = free.iter().map(|&i| self.unary[i].clone()).collect();
        for (i, f) in fixed.iter().enumerate() {
            if let Some(s) = *f {
                constant += self.unary[i][s];
            }
        }
        let mut edges = Vec::new();
        let mut pairwise = Vec::new();
        for (&(i, j), w) in self.edges.iter().zip(&self.pairwise) {
            match (fixed[i], fixed[j]) {
                (Some(si), Some(sj)) => constant += w[(si, sj)],
                (Some(si), None) => {
                    for (acc, v) in unary[new_index[j]].iter_mut().zip(w.row(si).iter()) {
                        *acc += v;
                    }
                }
                (None, Some(sj)) => {
                    for (acc, v) in unary[new_index[i]].iter_mut().zip(w.column(sj).iter()) {
                        *acc += v;
                    }
                }
                (None, None) => {
                    edges.push((new_index[i], new_index[j]));
                    pairwise.push(w.clone());
                }
            }
        }
        let states = free.iter().map(|&i| self.states[i]).collect();
        Ok(Conditioned {
            mrf: PairwiseMrf::new(states, unary, edges, pairwise)?,
            free,
            constant,
        })
    }
}

/// Result of [`PairwiseMrf::condition`].
#[derive(Debug, Clone)]
pub struct Conditioned {
    pub mrf: PairwiseMrf,
    /// Original index of each variable of the reduced model.
    pub free: Vec<usize>,
    /// Energy contributed by the fixed variables alone.
    pub constant: f64,
}

/// One state per variable (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Assignment(Vec<usize>);

impl Assignment {
    pub fn new(states: Vec<usize>) -> Self {
        Self(states)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn validate_for(&self, mrf: &PairwiseMrf) -> Result<()> {
        if self.0.len() != mrf.num_vars() {
            return Err(Error::InvalidAssignment(format!(
                "assignment has {} entries for {} variables",
                self.0.len(),
                mrf.num_vars()
            )));
        }
        for (i, (&s, &m)) in self.0.iter().zip(mrf.states()).enumerate() {
            if s >= m {
                return Err(Error::InvalidAssignment(format!(
                    "variable {i} has state {s} but only {m} states"
                )));
            }
        }
        Ok(())
    }
}

impl From<Vec<usize>> for Assignment {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

/// Stacked one-hot blocks `x = (x_1, ..., x_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorVector {
    values: Vec<f64>,
    blocks: Vec<usize>,
}

const ONE_HOT_TOL: f64 = 1e-9;

impl IndicatorVector {
    /// Wraps raw values; `blocks` are the per-variable state counts.
    pub fn new(values: Vec<f64>, blocks: Vec<usize>) -> Result<Self> {
        let total: usize = blocks.iter().sum();
        if total != values.len() {
            return Err(Error::DimensionMismatch {
                expected: total,
                got: values.len(),
            });
        }
        Ok(Self { values, blocks })
    }

    pub fn from_assignment(a: &Assignment, states: &[usize]) -> Result<Self> {
        if a.len() != states.len() {
            return Err(Error::InvalidAssignment(format!(
                "assignment has {} entries for {} variables",
                a.len(),
                states.len()
            )));
        }
        let mut values = Vec::with_capacity(states.iter().sum());
        for (i, (&s, &m)) in a.as_slice().iter().zip(states).enumerate() {
            if s >= m {
                return Err(Error::InvalidAssignment(format!(
                    "variable {i} has state {s} but only {m} states"
                )));
            }
            values.extend((0..m).map(|k| if k == s { 1.0 } else { 0.0 }));
        }
        Ok(Self {
            values,
            blocks: states.to_vec(),
        })
    }

    /// Decodes one-hot blocks; each entry must be within `1e-9` of 0 or 1 with
    /// exactly one near 1.
    pub fn to_assignment(&self) -> Result<Assignment> {
        let mut out = Vec::with_capacity(self.blocks.len());
        for (b, block) in self.blocks().enumerate() {
            let near_one = |v: &f64| (v - 1.0).abs() <= ONE_HOT_TOL;
            let binary = block.iter().all(|v| near_one(v) || v.abs() <= ONE_HOT_TOL);
            let hot: Vec<usize> = (0..block.len()).filter(|&k| near_one(&block[k])).collect();
            if !binary || hot.len() != 1 {
                return Err(Error::NotOneHot {
                    block: b,
                    values: block.to_vec(),
                });
            }
            out.push(hot[0]);
        }
        Ok(Assignment(out))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> + '_ {
        let mut start = 0;
        self.blocks.iter().map(move |&m| {
            let s = &self.values[start..start + m];
            start += m;
            s
        })
    }

    /// Per-block argmax; ties go to the lowest state.
    pub fn argmax_decode(&self) -> Assignment {
        Assignment(self.blocks().map(argmax_first).collect())
    }
}

pub(crate) fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

/// `to_indicator` in free-function form.
pub fn to_indicator(a: &Assignment, states: &[usize]) -> Result<IndicatorVector> {
    IndicatorVector::from_assignment(a, states)
}

pub fn from_indicator(x: &IndicatorVector) -> Result<Assignment> {
    x.to_assignment()
}

/// Exhaustive MAP with the default cap of `10^7` configurations.
pub fn brute_force_map(mrf: &PairwiseMrf) -> Result<(Assignment, f64)> {
    brute_force_map_with_cap(mrf, DEFAULT_ORACLE_CAP)
}

/// Exhaustive MAP. Ties go to the lexicographically smallest assignment.
///
/// The enumeration is split into contiguous chunks of the mixed-radix index
/// (variable 0 most significant), so index order is lexicographic order and
/// the reduction is deterministic regardless of thread count.
pub fn brute_force_map_with_cap(mrf: &PairwiseMrf, cap: u64) -> Result<(Assignment, f64)> {
    let size = mrf.state_space_size();
    if size > cap as f64 {
        return Err(Error::OracleTooLarge { size, cap });
    }
    let total = size as u64;
    let chunk = 1u64 << 14;
    let n_chunks = total.div_ceil(chunk);
    let best = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * chunk;
            let end = (start + chunk).min(total);
            let mut a = decode_index(start, mrf.states());
            let mut best = (f64::NEG_INFINITY, start);
            for idx in start..end {
                let e = mrf.energy_unchecked(&a);
                if e > best.0 {
                    best = (e, idx);
                }
                increment(&mut a, mrf.states());
            }
            best
        })
        .reduce(
            || (f64::NEG_INFINITY, u64::MAX),
            |x, y| {
                if y.0 > x.0 || (y.0 == x.0 && y.1 < x.1) {
                    y
                } else {
                    x
                }
            },
        );
    Ok((Assignment(decode_index(best.1, mrf.states())), best.0))
}

fn decode_index(mut idx: u64, states: &[usize]) -> Vec<usize> {
    let mut a = vec![0; states.len()];
    for (slot, &m) in a.iter_mut().zip(states).rev() {
        *slot = (idx % m as u64) as usize;
        idx /= m as u64;
    }
    a
}

fn increment(a: &mut [usize], states: &[usize]) {
    for (slot, &m) in a.iter_mut().zip(states).rev() {
        *slot += 1;
        if *slot < m {
            return;
        }
        *slot = 0;
    }
}
