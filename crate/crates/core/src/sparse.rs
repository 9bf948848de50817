//! Symmetric sparse matrices stored as upper-triangle coordinate lists.

use std::collections::HashMap;

use nalgebra::DMatrix;

/// Symmetric `n × n` matrix holding each unordered entry once (`row <= col`).
#[derive(Debug, Clone, PartialEq)]
pub struct SymSparse {
    n: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    csr: Csr,
}

/// Both triangles in compressed-row form, for products.
#[derive(Debug, Clone, PartialEq)]
struct Csr {
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    vals: Vec<f64>,
}

impl Csr {
    fn build(n: usize, rows: &[usize], cols: &[usize], vals: &[f64]) -> Self {
        let mut count = vec![0usize; n + 1];
        for (&r, &c) in rows.iter().zip(cols) {
            count[r + 1] += 1;
            if r != c {
                count[c + 1] += 1;
            }
        }
        for k in 0..n {
            count[k + 1] += count[k];
        }
        let total = count[n];
        let mut next = count.clone();
        let mut col_idx = vec![0u32; total];
        let mut out = vec![0.0; total];
        let mut put = |r: usize, c: usize, v: f64| {
            let slot = next[r];
            next[r] += 1;
            col_idx[slot] = c as u32;
            out[slot] = v;
        };
        for ((&r, &c), &v) in rows.iter().zip(cols).zip(vals) {
            put(r, c, v);
            if r != c {
                put(c, r, v);
            }
        }
        Self {
            row_ptr: count,
            col_idx,
            vals: out,
        }
    }
}

impl SymSparse {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            rows: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
            csr: Csr::build(n, &[], &[], &[]),
        }
    }

    /// Builds from `(row, col, value)` triplets; either triangle is accepted
    /// and duplicates are summed.
    pub fn from_triplets(
        n: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut out = Self::zeros(n);
        for (r, c, v) in triplets {
            let key = if r <= c { (r, c) } else { (c, r) };
            assert!(key.1 < n, "entry ({r}, {c}) outside {n}x{n}");
            match index.get(&key) {
                Some(&slot) => out.vals[slot] += v,
                None => {
                    index.insert(key, out.vals.len());
                    out.rows.push(key.0);
                    out.cols.push(key.1);
                    out.vals.push(v);
                }
            }
        }
        out.csr = Csr::build(n, &out.rows, &out.cols, &out.vals);
        out
    }

    pub(crate) fn from_parts(n: usize, rows: Vec<usize>, cols: Vec<usize>, vals: Vec<f64>) -> Self {
        debug_assert!(rows.len() == cols.len() && cols.len() == vals.len());
        let csr = Csr::build(n, &rows, &cols, &vals);
        Self {
            n,
            rows,
            cols,
            vals,
            csr,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz_upper(&self) -> usize {
        self.vals.len()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .zip(&self.cols)
            .zip(&self.vals)
            .map(|((&r, &c), &v)| (r, c, v))
    }

    /// `out = self · u`.
    pub fn matvec_into(&self, u: &[f64], out: &mut [f64]) {
        let Csr {
            row_ptr,
            col_idx,
            vals,
        } = &self.csr;
        for (r, o) in out.iter_mut().enumerate().take(self.n) {
            let span = row_ptr[r]..row_ptr[r + 1];
            *o = col_idx[span.clone()]
                .iter()
                .zip(&vals[span])
                .map(|(&c, &v)| v * u[c as usize])
                .sum();
        }
    }

    pub fn matvec(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.matvec_into(u, &mut out);
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        self.add_to_dense(&mut m, 1.0);
        m
    }

    /// `m += alpha · self`.
    pub fn add_to_dense(&self, m: &mut DMatrix<f64>, alpha: f64) {
        for (r, c, v) in self.entries() {
            m[(r, c)] += alpha * v;
            if r != c {
                m[(c, r)] += alpha * v;
            }
        }
    }

    /// Frobenius inner product with a dense symmetric matrix.
    pub fn inner_dense(&self, x: &DMatrix<f64>) -> f64 {
        self.entries()
            .map(|(r, c, v)| {
                if r == c {
                    v * x[(r, c)]
                } else {
                    v * (x[(r, c)] + x[(c, r)])
                }
            })
            .sum()
    }

    /// Frobenius inner product with `Y·Yᵀ`.
    pub fn inner_factored(&self, y: &DMatrix<f64>) -> f64 {
        self.entries()
            .map(|(r, c, v)| {
                let d = y.row(r).dot(&y.row(c));
                if r == c {
                    v * d
                } else {
                    2.0 * v * d
                }
            })
            .sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries()
            .map(|(r, c, v)| if r == c { v * v } else { 2.0 * v * v })
            .sum::<f64>()
            .sqrt()
    }
}
