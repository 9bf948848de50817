//! Reading and writing models in the UAI `MARKOV` text format.
//!
//! Factor values are probabilities; [`UaiModel::to_mrf`] turns them into
//! log-potentials, clamping below at [`PROB_FLOOR`] first.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mrf::{MrfBuilder, PairwiseMrf};

/// Smallest probability passed to `ln`.
pub const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct UaiFactor {
    pub scope: Vec<usize>,
    /// Row-major over the scope, last variable fastest.
    pub table: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UaiModel {
    pub cardinalities: Vec<usize>,
    pub factors: Vec<UaiFactor>,
}

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
    last_line: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let mut items = Vec::new();
        let mut last_line = 1;
        for (k, line) in text.lines().enumerate() {
            last_line = k + 1;
            let trimmed = line.trim_start();
            if trimmed.starts_with('c') {
                continue;
            }
            items.extend(trimmed.split_whitespace().map(|t| (k + 1, t)));
        }
        Self {
            items,
            pos: 0,
            last_line,
        }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let tok = self
            .items
            .get(self.pos)
            .copied()
            .ok_or_else(|| Error::Parse {
                line: self.last_line,
                message: format!("unexpected end of input, expected {what}"),
            })?;
        self.pos += 1;
        Ok(tok)
    }

    fn usize(&mut self, what: &str) -> Result<(usize, usize)> {
        let (line, tok) = self.next(what)?;
        tok.parse().map(|v| (line, v)).map_err(|_| Error::Parse {
            line,
            message: format!("expected {what}, found '{tok}'"),
        })
    }

    fn f64(&mut self, what: &str) -> Result<(usize, f64)> {
        let (line, tok) = self.next(what)?;
        tok.parse().map(|v| (line, v)).map_err(|_| Error::Parse {
            line,
            message: format!("expected {what}, found '{tok}'"),
        })
    }
}

/// Parses a `MARKOV` model. Scopes of more than two variables, repeated
/// variables in a scope, wrong table lengths and negative or non-finite
/// entries are rejected with the offending line.
pub fn parse_uai(text: &str) -> Result<UaiModel> {
    let mut toks = Tokens::new(text);
    let (line, kind) = toks.next("preamble")?;
    match kind {
        "MARKOV" => {}
        "BAYES" => {
            return Err(Error::Parse {
                line,
                message: "BAYES networks are not supported, only MARKOV".into(),
            })
        }
        other => {
            return Err(Error::Parse {
                line,
                message: format!("unknown preamble '{other}', expected MARKOV"),
            })
        }
    }
    let (_, n) = toks.usize("variable count")?;
    let mut cardinalities = Vec::with_capacity(n);
    for _ in 0..n {
        let (line, m) = toks.usize("cardinality")?;
        if m == 0 {
            return Err(Error::Parse {
                line,
                message: "cardinality must be positive".into(),
            });
        }
        cardinalities.push(m);
    }
    let (_, f) = toks.usize("factor count")?;
    let mut scopes = Vec::with_capacity(f);
    for _ in 0..f {
        let (line, k) = toks.usize("scope size")?;
        if k > 2 {
            return Err(Error::Parse {
                line,
                message: format!("factor arity {k} exceeds 2"),
            });
        }
        let mut scope = Vec::with_capacity(k);
        for _ in 0..k {
            let (line, v) = toks.usize("scope variable")?;
            if v >= n {
                return Err(Error::Parse {
                    line,
                    message: format!("scope variable {v} out of range (n = {n})"),
                });
            }
            if scope.contains(&v) {
                return Err(Error::Parse {
                    line,
                    message: format!("variable {v} repeated in scope"),
                });
            }
            scope.push(v);
        }
        scopes.push(scope);
    }
    let mut factors = Vec::with_capacity(f);
    for scope in scopes {
        let expected: usize = scope.iter().map(|&v| cardinalities[v]).product();
        let (line, len) = toks.usize("table length")?;
        if len != expected {
            return Err(Error::Parse {
                line,
                message: format!("table length {len} does not match scope size {expected}"),
            });
        }
        let mut table = Vec::with_capacity(len);
        for _ in 0..len {
            let (line, v) = toks.f64("table entry")?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Parse {
                    line,
                    message: format!("table entry {v} must be finite and nonnegative"),
                });
            }
            table.push(v);
        }
        factors.push(UaiFactor { scope, table });
    }
    if let Some(&(line, tok)) = toks.items.get(toks.pos) {
        return Err(Error::Parse {
            line,
            message: format!("trailing token '{tok}'"),
        });
    }
    Ok(UaiModel {
        cardinalities,
        factors,
    })
}

impl UaiModel {
    /// Writes the model back in `MARKOV` format; `parse_uai` recovers it
    /// exactly.
    pub fn print(&self) -> String {
        let mut out = String::from("MARKOV\n");
        let _ = writeln!(out, "{}", self.cardinalities.len());
        let _ = writeln!(out, "{}", join(&self.cardinalities));
        let _ = writeln!(out, "{}", self.factors.len());
        for f in &self.factors {
            let _ = writeln!(out, "{} {}", f.scope.len(), join(&f.scope));
        }
        for f in &self.factors {
            let _ = writeln!(out, "\n{}", f.table.len());
            let _ = writeln!(out, "{}", join(&f.table));
        }
        out
    }

    /// Log-potential model. Constant (empty-scope) factors shift every
    /// energy equally and are dropped.
    pub fn to_mrf(&self) -> Result<PairwiseMrf> {
        let mut b = MrfBuilder::new(self.cardinalities.clone());
        let log = |p: f64| p.max(PROB_FLOOR).ln();
        for f in &self.factors {
            match f.scope[..] {
                [] => {}
                [i] => {
                    let w: Vec<f64> = f.table.iter().map(|&p| log(p)).collect();
                    b.add_unary(i, &w)?;
                }
                [i, j] => {
                    let (mi, mj) = (self.cardinalities[i], self.cardinalities[j]);
                    let t = DMatrix::from_fn(mi, mj, |s, u| log(f.table[s * mj + u]));
                    b.add_pairwise(i, j, &t)?;
                }
                _ => {
                    return Err(Error::InvalidModel(format!(
                        "factor arity {} exceeds 2",
                        f.scope.len()
                    )))
                }
            }
        }
        b.build()
    }

    /// One factor per unary and per edge, holding `exp` of the potentials.
    pub fn from_mrf(mrf: &PairwiseMrf) -> Self {
        let mut factors = Vec::with_capacity(mrf.num_vars() + mrf.edges().len());
        for i in 0..mrf.num_vars() {
            factors.push(UaiFactor {
                scope: vec![i],
                table: mrf.unary(i).iter().map(|w| w.exp()).collect(),
            });
        }
        for (k, &(i, j)) in mrf.edges().iter().enumerate() {
            let w = mrf.pairwise(k);
            let table = (0..w.nrows())
                .flat_map(|s| (0..w.ncols()).map(move |t| w[(s, t)].exp()))
                .collect();
            factors.push(UaiFactor {
                scope: vec![i, j],
                table,
            });
        }
        Self {
            cardinalities: mrf.states().to_vec(),
            factors,
        }
    }

    /// Product of all factor values at `a`.
    pub fn probability(&self, a: &[usize]) -> f64 {
        self.factors
            .iter()
            .map(|f| {
                let idx = f
                    .scope
                    .iter()
                    .fold(0, |acc, &v| acc * self.cardinalities[v] + a[v]);
                f.table[idx]
            })
            .product()
    }
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}
