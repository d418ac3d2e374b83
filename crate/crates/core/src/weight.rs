//! Matrix weights that are piecewise constant on the leaves of a dyadic tree.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dyadic::{DyadicInterval, TreeConfig};
use crate::error::{Error, Result};
use crate::linalg::{self, asymmetry, lambda_max, sym_eigen, sym_inv_sqrt, sym_sqrt, symmetrize};

/// Smallest eigenvalue a leaf may have.
pub const DEFAULT_EPS_PD: f64 = 1e-10;

/// Largest symmetry defect tolerated when reading leaves.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// A `d × d` matrix weight, constant on each level-`depth` interval.
///
/// Interval integrals `W(I)` are precomputed for every node, bottom-up, so
/// every integral is the finite sum of `|L|·W(L)` over leaves `L ⊆ I`.
#[derive(Debug, Clone)]
pub struct WeightGrid {
    d: usize,
    tree: TreeConfig,
    leaves: Vec<DMatrix<f64>>,
    integrals: Vec<DMatrix<f64>>,
    eps_pd: f64,
}

impl WeightGrid {
    pub fn new(d: usize, depth: u32, leaves: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::with_eps(d, depth, leaves, DEFAULT_EPS_PD)
    }

    pub fn with_eps(d: usize, depth: u32, leaves: Vec<DMatrix<f64>>, eps_pd: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::BadParams("dimension must be at least 1".into()));
        }
        let tree = TreeConfig::new(depth)?;
        if leaves.len() != tree.leaf_count() {
            return Err(Error::ShapeMismatch(format!(
                "depth {depth} needs {} leaves, got {}",
                tree.leaf_count(),
                leaves.len()
            )));
        }
        let mut clean = Vec::with_capacity(leaves.len());
        for (k, m) in leaves.into_iter().enumerate() {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::ShapeMismatch(format!(
                    "leaf {k} is {}x{}, expected {d}x{d}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!("leaf {k} has non-finite entries")));
            }
            if asymmetry(&m) > SYMMETRY_TOL * m.amax().max(1.0) {
                return Err(Error::InvalidInput(format!("leaf {k} is not symmetric")));
            }
            let m = symmetrize(&m);
            let min_eigenvalue = sym_eigen(&m).min();
            if min_eigenvalue < eps_pd {
                return Err(Error::SingularLeaf {
                    leaf: k,
                    min_eigenvalue,
                });
            }
            clean.push(m);
        }

        let mut integrals = vec![DMatrix::zeros(d, d); tree.node_count()];
        for (leaf, m) in tree.leaves().zip(&clean) {
            integrals[leaf.node_id()] = m * leaf.measure();
        }
        for id in (0..tree.internal_count()).rev() {
            let (l, r) = DyadicInterval::from_node_id(id).halves();
            integrals[id] = &integrals[l.node_id()] + &integrals[r.node_id()];
        }

        Ok(Self {
            d,
            tree,
            leaves: clean,
            integrals,
            eps_pd,
        })
    }

    pub fn constant(d: usize, depth: u32, value: &DMatrix<f64>) -> Result<Self> {
        let n = 1usize << depth;
        Self::new(d, depth, vec![value.clone(); n])
    }

    pub fn identity(d: usize, depth: u32) -> Result<Self> {
        Self::constant(d, depth, &DMatrix::identity(d, d))
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn depth(&self) -> u32 {
        self.tree.depth
    }

    pub fn tree(&self) -> TreeConfig {
        self.tree
    }

    pub fn eps_pd(&self) -> f64 {
        self.eps_pd
    }

    pub fn leaves(&self) -> &[DMatrix<f64>] {
        &self.leaves
    }

    pub fn leaf(&self, k: usize) -> &DMatrix<f64> {
        &self.leaves[k]
    }

    /// `W(I)` for a node id; panics outside the tree.
    pub fn integral_at(&self, node_id: usize) -> &DMatrix<f64> {
        &self.integrals[node_id]
    }

    /// `W(I) = ∫_I W`.
    pub fn integral(&self, i: &DyadicInterval) -> Result<DMatrix<f64>> {
        self.tree.check(i)?;
        Ok(self.integrals[i.node_id()].clone())
    }

    /// `⟨W⟩_I = W(I)/|I|`.
    pub fn average(&self, i: &DyadicInterval) -> Result<DMatrix<f64>> {
        self.tree.check(i)?;
        Ok(self.average_unchecked(i))
    }

    pub(crate) fn average_unchecked(&self, i: &DyadicInterval) -> DMatrix<f64> {
        if i.level == self.tree.depth {
            return self.leaves[i.index as usize].clone();
        }
        &self.integrals[i.node_id()] * (1u64 << i.level) as f64
    }

    pub fn same_shape(&self, other: &WeightGrid) -> bool {
        self.d == other.d && self.tree == other.tree
    }

    pub fn max_leaf_norm(&self) -> f64 {
        self.leaves.iter().map(lambda_max).fold(0.0, f64::max)
    }

    /// Leafwise inverse `W⁻¹`.
    pub fn inverse(&self) -> Result<WeightGrid> {
        let mut inv = Vec::with_capacity(self.leaves.len());
        for (k, m) in self.leaves.iter().enumerate() {
            let e = sym_eigen(m);
            if e.min() <= 0.0 || e.max() / e.min() > 1.0 / self.eps_pd {
                return Err(Error::SingularLeaf {
                    leaf: k,
                    min_eigenvalue: e.min(),
                });
            }
            inv.push(e.map(|x| 1.0 / x));
        }
        WeightGrid::with_eps(self.d, self.tree.depth, inv, self.eps_pd)
    }

    pub fn scaled(&self, c: f64) -> Result<WeightGrid> {
        let leaves = self.leaves.iter().map(|m| m * c).collect();
        WeightGrid::with_eps(self.d, self.tree.depth, leaves, self.eps_pd)
    }

    /// `[W]_{A₂} = max_I ‖⟨W⟩_I^{1/2} ⟨W⁻¹⟩_I^{1/2}‖²` over every node.
    pub fn a2_characteristic(&self) -> Result<f64> {
        let inv = self.inverse()?;
        Ok(a2_of_pair(self, &inv))
    }

    /// Seeded lower bound for the reverse-Hölder constant `[W]_{R₂}`.
    ///
    /// For every interval `J` the ratio
    /// `⟨‖AWA‖⟩_J / ⟨‖AWA‖^{1/2}⟩_J²` is maximised over a candidate set:
    /// the identity, `⟨W⟩_J⁻¹`, `⟨W⟩_J^{-1/2}`, `n_samples` rank-one
    /// projections onto random unit directions and `n_samples` random PSD
    /// matrices. The result is at least 1.
    pub fn r2_estimate(&self, n_samples: usize, seed: u64) -> f64 {
        let d = self.d;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut global: Vec<DMatrix<f64>> = vec![DMatrix::identity(d, d)];
        for _ in 0..n_samples {
            let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let n = v.norm();
            if n > 0.0 {
                let u = v / n;
                global.push(&u * u.transpose());
            }
        }
        for _ in 0..n_samples {
            let b = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            global.push(&b * b.transpose());
        }

        let depth = self.tree.depth;
        let n_nodes = self.tree.node_count();
        let mut best = 1.0f64;

        for a in &global {
            // per-leaf ‖AWA‖ and its square root, then node sums bottom-up
            let mut s1 = vec![0.0; n_nodes];
            let mut s2 = vec![0.0; n_nodes];
            for (leaf, w) in self.tree.leaves().zip(&self.leaves) {
                let v = lambda_max(&(a * w * a)).max(0.0);
                s1[leaf.node_id()] = v;
                s2[leaf.node_id()] = v.sqrt();
            }
            for id in (0..self.tree.internal_count()).rev() {
                let (l, r) = DyadicInterval::from_node_id(id).halves();
                s1[id] = s1[l.node_id()] + s1[r.node_id()];
                s2[id] = s2[l.node_id()] + s2[r.node_id()];
            }
            for j in self.tree.intervals() {
                let count = (1u64 << (depth - j.level)) as f64;
                best = best.max(rh_ratio(s1[j.node_id()] / count, s2[j.node_id()] / count));
            }
        }

        for j in self.tree.intervals() {
            let avg = self.average_unchecked(&j);
            let locals = [linalg::sym_inv(&avg), sym_inv_sqrt(&avg)];
            for a in &locals {
                let (mut m1, mut m2) = (0.0, 0.0);
                let range = j.leaf_range(depth);
                let count = range.len() as f64;
                for k in range {
                    let v = lambda_max(&(a * &self.leaves[k] * a)).max(0.0);
                    m1 += v;
                    m2 += v.sqrt();
                }
                best = best.max(rh_ratio(m1 / count, m2 / count));
            }
        }
        best
    }

    pub fn characteristics(&self, n_samples: usize, seed: u64) -> Result<Characteristics> {
        Ok(Characteristics::new(
            self.a2_characteristic()?,
            self.r2_estimate(n_samples, seed),
        ))
    }

    pub fn to_file(&self) -> WeightFile {
        WeightFile {
            d: self.d,
            depth: self.tree.depth,
            leaves: self
                .leaves
                .iter()
                .map(|m| m.transpose().iter().copied().collect())
                .collect(),
        }
    }

    pub fn from_file(file: &WeightFile) -> Result<Self> {
        let d = file.d;
        let mut leaves = Vec::with_capacity(file.leaves.len());
        for (k, row_major) in file.leaves.iter().enumerate() {
            if row_major.len() != d * d {
                return Err(Error::ShapeMismatch(format!(
                    "leaf {k} has {} entries, expected {}",
                    row_major.len(),
                    d * d
                )));
            }
            leaves.push(DMatrix::from_row_slice(d, d, row_major));
        }
        Self::new(d, file.depth, leaves)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(&serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("weight file serializes")
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn rh_ratio(mean_norm: f64, mean_sqrt: f64) -> f64 {
    if mean_sqrt <= 0.0 {
        1.0
    } else {
        mean_norm / (mean_sqrt * mean_sqrt)
    }
}

/// `max_I ‖⟨W⟩_I^{1/2}⟨U⟩_I^{1/2}‖²` for a pair of grids on the same tree.
pub(crate) fn a2_of_pair(w: &WeightGrid, u: &WeightGrid) -> f64 {
    w.tree
        .intervals()
        .map(|i| {
            let p = sym_sqrt(&w.average_unchecked(&i)) * sym_sqrt(&u.average_unchecked(&i));
            lambda_max(&(p.transpose() * p))
        })
        .fold(1.0, f64::max)
}

/// On-disk weight format; leaves are row-major `d·d` arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightFile {
    pub d: usize,
    pub depth: u32,
    pub leaves: Vec<Vec<f64>>,
}

/// `[W]_{A₂}`, the reverse-Hölder lower bound and `B(W) = √(R₂·A₂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Characteristics {
    pub a2: f64,
    pub r2_lower: f64,
    pub b_w: f64,
}

impl Characteristics {
    pub fn new(a2: f64, r2_lower: f64) -> Self {
        Self {
            a2,
            r2_lower,
            b_w: (r2_lower * a2).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightKind {
    Identity,
    /// `|x − center|^exponent · Id`, averaged exactly over each leaf.
    ScalarPower { exponent: f64, center: f64 },
    /// `R(θ_L) diag(t, 1/t) R(θ_L)ᵀ` in the first two coordinates with
    /// `θ_L = turns·π·(k + ½)/2^N` on leaf `k`.
    RotatingDiagonal { eccentricity: f64, turns: f64 },
    /// Independent leaves `Q diag(t^{u_i}) Qᵀ`, `u_i ~ U[-1, 1]`, with `Q` a
    /// product of Givens rotations of angle `angle_scale·π·U[-1, 1]`.
    RandomA2 { eccentricity: f64, angle_scale: f64 },
    /// Row-major leaves.
    Explicit { leaves: Vec<Vec<f64>> },
}

pub fn generate_weight(kind: &WeightKind, d: usize, depth: u32, seed: u64) -> Result<WeightGrid> {
    let tree = TreeConfig::new(depth)?;
    if d == 0 {
        return Err(Error::BadParams("dimension must be at least 1".into()));
    }
    match kind {
        WeightKind::Identity => WeightGrid::identity(d, depth),
        WeightKind::ScalarPower { exponent, center } => {
            if !(*exponent > -1.0) || !exponent.is_finite() || !center.is_finite() {
                return Err(Error::BadParams(format!(
                    "scalar_power needs a finite exponent > -1, got {exponent}"
                )));
            }
            let leaves = tree
                .leaves()
                .map(|leaf| {
                    let (a, b) = (leaf.left(), leaf.left() + leaf.measure());
                    let value = if *exponent == 0.0 {
                        1.0
                    } else {
                        let antiderivative = |x: f64| {
                            let t = x - center;
                            t.signum() * t.abs().powf(exponent + 1.0) / (exponent + 1.0)
                        };
                        (antiderivative(b) - antiderivative(a)) / (b - a)
                    };
                    DMatrix::identity(d, d) * value
                })
                .collect();
            WeightGrid::new(d, depth, leaves)
        }
        WeightKind::RotatingDiagonal {
            eccentricity,
            turns,
        } => {
            if d < 2 {
                return Err(Error::BadParams("rotating_diagonal needs d >= 2".into()));
            }
            if !(*eccentricity >= 1.0) || !turns.is_finite() {
                return Err(Error::BadParams(format!(
                    "rotating_diagonal needs eccentricity >= 1, got {eccentricity}"
                )));
            }
            let n = tree.leaf_count() as f64;
            let leaves = (0..tree.leaf_count())
                .map(|k| {
                    let theta = turns * PI * (k as f64 + 0.5) / n;
                    let mut diag = DMatrix::identity(d, d);
                    diag[(0, 0)] = *eccentricity;
                    diag[(1, 1)] = 1.0 / eccentricity;
                    let r = givens(d, 0, 1, theta);
                    &r * diag * r.transpose()
                })
                .collect();
            WeightGrid::new(d, depth, leaves)
        }
        WeightKind::RandomA2 {
            eccentricity,
            angle_scale,
        } => {
            if !(*eccentricity >= 1.0) || !angle_scale.is_finite() {
                return Err(Error::BadParams(format!(
                    "random_a2 needs eccentricity >= 1, got {eccentricity}"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let leaves = (0..tree.leaf_count())
                .map(|_| {
                    let diag = DMatrix::from_diagonal(&DVector::from_fn(d, |_, _| {
                        eccentricity.powf(rng.random_range(-1.0..=1.0))
                    }));
                    let mut q = DMatrix::<f64>::identity(d, d);
                    for p in 0..d {
                        for r in (p + 1)..d {
                            let angle = angle_scale * PI * rng.random_range(-1.0..=1.0);
                            q = q * givens(d, p, r, angle);
                        }
                    }
                    &q * diag * q.transpose()
                })
                .collect();
            WeightGrid::new(d, depth, leaves)
        }
        WeightKind::Explicit { leaves } => WeightGrid::from_file(&WeightFile {
            d,
            depth,
            leaves: leaves.clone(),
        }),
    }
}

fn givens(d: usize, p: usize, q: usize, theta: f64) -> DMatrix<f64> {
    let mut g = DMatrix::identity(d, d);
    let (s, c) = theta.sin_cos();
    g[(p, p)] = c;
    g[(q, q)] = c;
    g[(p, q)] = -s;
    g[(q, p)] = s;
    g
}
