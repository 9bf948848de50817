//! Seeded generators: planted labeling and rotation-synchronization instances,
//! and generic random MRFs for test corpora.
//!
//! Every generator is a pure function of its spec (the seed is part of it).

use nalgebra::DMatrix;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mrf::{Assignment, MrfBuilder, PairwiseMrf};

/// Graph on which a labeling instance is planted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "family")]
pub enum GraphFamily {
    Complete,
    /// `rows × cols` 4-connected grid; requires `n = rows · cols`.
    Grid {
        rows: usize,
        cols: usize,
    },
    ErdosRenyi {
        p: f64,
    },
    EdgeList {
        edges: Vec<(usize, usize)>,
    },
}

impl GraphFamily {
    /// Sorted simple edge list with `i < j`.
    pub fn edges(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<(usize, usize)>> {
        let mut edges = match self {
            Self::Complete => (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .collect(),
            Self::Grid { rows, cols } => {
                if rows * cols != n {
                    return Err(Error::InvalidConfig(format!(
                        "grid {rows}x{cols} does not have {n} nodes"
                    )));
                }
                grid_edges(*rows, *cols)
            }
            Self::ErdosRenyi { p } => {
                check_probability("p", *p)?;
                erdos_renyi(n, *p, rng)
            }
            Self::EdgeList { edges } => {
                let mut out = Vec::with_capacity(edges.len());
                for &(a, b) in edges {
                    if a == b || a.max(b) >= n {
                        return Err(Error::InvalidConfig(format!("bad edge ({a}, {b})")));
                    }
                    out.push((a.min(b), a.max(b)));
                }
                out
            }
        };
        edges.sort_unstable();
        let before = edges.len();
        edges.dedup();
        if edges.len() != before {
            return Err(Error::InvalidConfig("duplicate edges".into()));
        }
        Ok(edges)
    }
}

pub fn grid_edges(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let v = r * cols + c;
            if c + 1 < cols {
                edges.push((v, v + 1));
            }
            if r + 1 < rows {
                edges.push((v, v + cols));
            }
        }
    }
    edges
}

fn erdos_renyi(n: usize, p: f64, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    edges
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "{name} must lie in [0, 1], got {p}"
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelingSpec {
    pub n: usize,
    pub m: usize,
    pub graph: GraphFamily,
    pub unary_error_rate: f64,
    pub pairwise_error_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationSpec {
    /// Number of shapes.
    pub n: usize,
    /// Number of discrete orientations.
    pub m: usize,
    pub p_obs: f64,
    pub p_false: f64,
    pub seed: u64,
}

/// A generated model with its planted answer.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedInstance {
    pub mrf: PairwiseMrf,
    pub ground_truth: Assignment,
    /// Edges whose potential agrees with the ground truth.
    pub true_edges: Vec<(usize, usize)>,
    /// Corrupted edges.
    pub false_edges: Vec<(usize, usize)>,
    /// Variables whose unary was corrupted (labeling only).
    pub corrupted_unaries: Vec<usize>,
    /// Set when no unary pins the global orientation, so the ground truth is
    /// only recoverable up to a common shift.
    pub gauge_degenerate: bool,
}

/// Serializable metadata of a [`PlantedInstance`], without the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedMeta {
    pub ground_truth: Assignment,
    pub true_edges: Vec<(usize, usize)>,
    pub false_edges: Vec<(usize, usize)>,
    pub corrupted_unaries: Vec<usize>,
    pub gauge_degenerate: bool,
}

impl PlantedInstance {
    pub fn meta(&self) -> PlantedMeta {
        PlantedMeta {
            ground_truth: self.ground_truth.clone(),
            true_edges: self.true_edges.clone(),
            false_edges: self.false_edges.clone(),
            corrupted_unaries: self.corrupted_unaries.clone(),
            gauge_degenerate: self.gauge_degenerate,
        }
    }

    /// Whether `a` equals the ground truth, up to a common cyclic shift when
    /// the instance is gauge-degenerate.
    pub fn recovered(&self, a: &Assignment) -> bool {
        let gt = self.ground_truth.as_slice();
        let a = a.as_slice();
        if a == gt {
            return true;
        }
        if !self.gauge_degenerate || a.len() != gt.len() || gt.is_empty() {
            return false;
        }
        let m = self.mrf.states()[0];
        let shift = (a[0] + m - gt[0]) % m;
        a.iter().zip(gt).all(|(&x, &g)| x == (g + shift) % m)
    }
}

/// Planted labeling instance: the ground truth is state 0 everywhere, every
/// potential is one-hot, and corrupted potentials move their 1 to a uniformly
/// chosen wrong entry.
pub fn gen_labeling(spec: &LabelingSpec) -> Result<PlantedInstance> {
    check_probability("unary error rate", spec.unary_error_rate)?;
    check_probability("pairwise error rate", spec.pairwise_error_rate)?;
    if spec.m == 0 {
        return Err(Error::InvalidConfig("m must be at least 1".into()));
    }
    let (n, m) = (spec.n, spec.m);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let edges = spec.graph.edges(n, &mut rng)?;
    let mut b = MrfBuilder::new(vec![m; n]);
    let mut corrupted_unaries = Vec::new();
    for i in 0..n {
        let mut w = vec![0.0; m];
        if m > 1 && rng.random::<f64>() < spec.unary_error_rate {
            w[rng.random_range(1..m)] = 1.0;
            corrupted_unaries.push(i);
        } else {
            w[0] = 1.0;
        }
        b.add_unary(i, &w)?;
    }
    let mut true_edges = Vec::new();
    let mut false_edges = Vec::new();
    for &(i, j) in &edges {
        let mut w = DMatrix::zeros(m, m);
        if m > 1 && rng.random::<f64>() < spec.pairwise_error_rate {
            let k = rng.random_range(1..m * m);
            w[(k / m, k % m)] = 1.0;
            false_edges.push((i, j));
        } else {
            w[(0, 0)] = 1.0;
            true_edges.push((i, j));
        }
        b.add_pairwise(i, j, &w)?;
    }
    Ok(PlantedInstance {
        mrf: b.build()?,
        ground_truth: Assignment::new(vec![0; n]),
        true_edges,
        false_edges,
        corrupted_unaries,
        gauge_degenerate: false,
    })
}

/// The cyclic shift `Q_k`: `Q_k[s, t] = 1` iff `t = (s + k) mod m`.
pub fn cyclic_shift(m: usize, k: usize) -> Result<DMatrix<f64>> {
    if k >= m {
        return Err(Error::InvalidConfig(format!(
            "shift {k} out of range for m = {m}"
        )));
    }
    Ok(DMatrix::from_fn(m, m, |s, t| {
        if t == (s + k) % m {
            1.0
        } else {
            0.0
        }
    }))
}

/// Planted rotation synchronization.
///
/// Shape 0 has orientation 0 and the others are uniform. Each pair is observed
/// with probability `p_obs`; an observed pair carries `Q_k` with
/// `k = g_j − g_i mod m`, replaced by a uniformly random wrong shift with
/// probability `p_false`. Neighbours of shape 0 get the unary `e_{g_i}`.
pub fn gen_rotation_sync(spec: &RotationSpec) -> Result<PlantedInstance> {
    check_probability("p_obs", spec.p_obs)?;
    check_probability("p_false", spec.p_false)?;
    if spec.m < 2 {
        return Err(Error::InvalidConfig("rotation model needs m >= 2".into()));
    }
    let (n, m) = (spec.n, spec.m);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let truth: Vec<usize> = (0..n)
        .map(|i| if i == 0 { 0 } else { rng.random_range(0..m) })
        .collect();
    let shifts: Vec<DMatrix<f64>> = (0..m).map(|k| cyclic_shift(m, k)).collect::<Result<_>>()?;
    let mut b = MrfBuilder::new(vec![m; n]);
    let mut true_edges = Vec::new();
    let mut false_edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() >= spec.p_obs {
                continue;
            }
            let correct = (truth[j] + m - truth[i]) % m;
            let k = if rng.random::<f64>() < spec.p_false {
                false_edges.push((i, j));
                let wrong: Vec<usize> = (0..m).filter(|&k| k != correct).collect();
                *wrong.choose(&mut rng).expect("m >= 2")
            } else {
                true_edges.push((i, j));
                correct
            };
            b.add_pairwise(i, j, &shifts[k])?;
        }
    }
    let mut anchored = false;
    for &(i, j) in true_edges.iter().chain(&false_edges) {
        if i == 0 {
            let mut w = vec![0.0; m];
            w[truth[j]] = 1.0;
            b.add_unary(j, &w)?;
            anchored = true;
        }
    }
    Ok(PlantedInstance {
        mrf: b.build()?,
        ground_truth: Assignment::new(truth),
        true_edges,
        false_edges,
        corrupted_unaries: Vec::new(),
        gauge_degenerate: !anchored,
    })
}

/// Random MRF with standard-normal potentials times `scale` on an
/// Erdős–Rényi graph of the given density.
pub fn gen_random_mrf(
    n: usize,
    m: usize,
    density: f64,
    scale: f64,
    seed: u64,
) -> Result<PairwiseMrf> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "density must lie in (0, 1], got {density}"
        )));
    }
    if m == 0 {
        return Err(Error::InvalidConfig("m must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = MrfBuilder::new(vec![m; n]);
    for i in 0..n {
        let w: Vec<f64> = (0..m)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        b.add_unary(i, &w)?;
    }
    for (i, j) in erdos_renyi(n, density, &mut rng) {
        let w = DMatrix::from_fn(m, m, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        b.add_pairwise(i, j, &w)?;
    }
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mrf::brute_force_map;

    #[test]
    fn shifts_for_three_states() {
        let q1 = cyclic_shift(3, 1).unwrap();
        let q2 = cyclic_shift(3, 2).unwrap();
        assert_eq!(
            q1,
            DMatrix::from_row_slice(3, 3, &[0., 1., 0., 0., 0., 1., 1., 0., 0.])
        );
        assert_eq!(
            q2,
            DMatrix::from_row_slice(3, 3, &[0., 0., 1., 1., 0., 0., 0., 1., 0.])
        );
        assert_eq!(cyclic_shift(5, 0).unwrap(), DMatrix::identity(5, 5));
        assert!(cyclic_shift(3, 3).is_err());
    }

    #[test]
    fn shifts_form_a_cyclic_group() {
        for m in 1..=12 {
            for a in 0..m {
                for b in 0..m {
                    let lhs = cyclic_shift(m, a).unwrap() * cyclic_shift(m, b).unwrap();
                    assert_eq!(lhs, cyclic_shift(m, (a + b) % m).unwrap());
                }
            }
        }
    }

    #[test]
    fn noiseless_rotation_optimum_is_planted() {
        for seed in 0..5 {
            let inst = gen_rotation_sync(&RotationSpec {
                n: 5,
                m: 3,
                p_obs: 1.0,
                p_false: 0.0,
                seed,
            })
            .unwrap();
            let (best, energy) = brute_force_map(&inst.mrf).unwrap();
            assert_eq!(best, inst.ground_truth);
            assert_eq!(inst.mrf.energy(&inst.ground_truth).unwrap(), energy);
            let mut count = 0;
            let mut a = vec![0usize; 5];
            loop {
                if inst.mrf.energy(&Assignment::new(a.clone())).unwrap() == energy {
                    count += 1;
                }
                let mut k = 0;
                while k < 5 && a[k] == 2 {
                    a[k] = 0;
                    k += 1;
                }
                if k == 5 {
                    break;
                }
                a[k] += 1;
            }
            assert_eq!(count, 1);
        }
    }

    #[test]
    fn true_edges_contribute_one() {
        let inst = gen_rotation_sync(&RotationSpec {
            n: 12,
            m: 4,
            p_obs: 0.6,
            p_false: 0.4,
            seed: 3,
        })
        .unwrap();
        let gt = inst.ground_truth.as_slice();
        for &(i, j) in &inst.true_edges {
            let k = inst.mrf.edge_index(i, j).unwrap();
            assert_eq!(inst.mrf.pairwise(k)[(gt[i], gt[j])], 1.0);
        }
        for &(i, j) in &inst.false_edges {
            let k = inst.mrf.edge_index(i, j).unwrap();
            assert_eq!(inst.mrf.pairwise(k)[(gt[i], gt[j])], 0.0);
        }
    }

    #[test]
    fn unobserved_rotation_has_no_edges() {
        let inst = gen_rotation_sync(&RotationSpec {
            n: 6,
            m: 3,
            p_obs: 0.0,
            p_false: 0.2,
            seed: 1,
        })
        .unwrap();
        assert!(inst.mrf.edges().is_empty());
        assert!(inst.gauge_degenerate);
        let shifted = Assignment::new(
            inst.ground_truth
                .as_slice()
                .iter()
                .map(|g| (g + 1) % 3)
                .collect(),
        );
        assert!(inst.recovered(&shifted));
    }

    #[test]
    fn rotation_edge_count_is_binomial() {
        let (n, p) = (40usize, 0.3);
        let pairs = (n * (n - 1) / 2) as f64;
        let (mean, sd) = (p * pairs, (pairs * p * (1.0 - p)).sqrt());
        for seed in 0..10 {
            let inst = gen_rotation_sync(&RotationSpec {
                n,
                m: 3,
                p_obs: p,
                p_false: 0.1,
                seed,
            })
            .unwrap();
            let e = inst.mrf.edges().len() as f64;
            assert!((e - mean).abs() < 3.0 * sd, "seed {seed}: {e} edges");
        }
    }

    #[test]
    fn labeling_rates_zero_and_one() {
        let spec = LabelingSpec {
            n: 5,
            m: 3,
            graph: GraphFamily::Complete,
            unary_error_rate: 0.0,
            pairwise_error_rate: 0.0,
            seed: 2,
        };
        let clean = gen_labeling(&spec).unwrap();
        assert_eq!(clean.true_edges.len(), 10);
        assert!(clean.false_edges.is_empty());
        assert_eq!(brute_force_map(&clean.mrf).unwrap().0, clean.ground_truth);

        let noisy = gen_labeling(&LabelingSpec {
            pairwise_error_rate: 1.0,
            unary_error_rate: 1.0,
            ..spec
        })
        .unwrap();
        assert!(noisy.true_edges.is_empty());
        assert_eq!(noisy.corrupted_unaries.len(), 5);
        for k in 0..noisy.mrf.edges().len() {
            let w = noisy.mrf.pairwise(k);
            assert_eq!(w[(0, 0)], 0.0);
            assert_eq!(w.sum(), 1.0);
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let spec = LabelingSpec {
            n: 9,
            m: 3,
            graph: GraphFamily::ErdosRenyi { p: 0.5 },
            unary_error_rate: 0.3,
            pairwise_error_rate: 0.3,
            seed: 11,
        };
        assert_eq!(gen_labeling(&spec).unwrap(), gen_labeling(&spec).unwrap());
        let r = RotationSpec {
            n: 9,
            m: 4,
            p_obs: 0.5,
            p_false: 0.3,
            seed: 4,
        };
        assert_eq!(
            gen_rotation_sync(&r).unwrap(),
            gen_rotation_sync(&r).unwrap()
        );
        assert_eq!(
            gen_random_mrf(6, 2, 0.5, 1.0, 7).unwrap(),
            gen_random_mrf(6, 2, 0.5, 1.0, 7).unwrap()
        );
    }

    #[test]
    fn random_mrf_examples() {
        assert_eq!(gen_random_mrf(4, 2, 1.0, 1.0, 0).unwrap().edges().len(), 6);
        let zero = gen_random_mrf(4, 3, 1.0, 0.0, 0).unwrap();
        assert!(zero
            .edges()
            .iter()
            .enumerate()
            .all(|(k, _)| zero.pairwise(k).iter().all(|&v| v == 0.0)));
        assert!((0..4).all(|i| zero.unary(i).iter().all(|&v| v == 0.0)));
        assert_ne!(
            gen_random_mrf(5, 3, 0.7, 1.0, 1).unwrap(),
            gen_random_mrf(5, 3, 0.7, 1.0, 2).unwrap()
        );
        assert!(gen_random_mrf(4, 2, 0.0, 1.0, 0).is_err());
    }

    #[test]
    fn grid_family() {
        let e = GraphFamily::Grid { rows: 2, cols: 3 }
            .edges(6, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert_eq!(e.len(), 7);
        assert!(GraphFamily::Grid { rows: 2, cols: 3 }
            .edges(5, &mut ChaCha8Rng::seed_from_u64(0))
            .is_err());
    }
}
