//! Matrix Carleson embeddings on the truncated tree.
//!
//! A sequence `{A_I}` of positive semi-definite matrices is tested against a
//! weight `W` through the two testing constants, and compared with the exact
//! embedding constant of `Σ_I ⟨A_I⟨f⟩_I, ⟨f⟩_I⟩ ≤ C ‖f‖²_{L²(W⁻¹)}`.
//! Stopping trees of `W` and the sequence induced by an operator live here too.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::band::BandOperator;
use crate::dyadic::{DyadicInterval, TreeConfig};
use crate::error::{Error, Result};
use crate::haar::{haar_slot, HaarSystem};
use crate::linalg::{lambda_max, spectral_norm, sym_eigen, sym_inv, sym_inv_sqrt, sym_sqrt, symmetrize};
use crate::weight::{WeightGrid, SYMMETRY_TOL};

/// Smallest eigenvalue allowed for a stored `A_I`, relative to `max(1, ‖A_I‖)`.
pub const PSD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CarlesonInstance {
    d: usize,
    depth: u32,
    /// `A_I` by node id, zero matrices included.
    a: Vec<DMatrix<f64>>,
}

impl CarlesonInstance {
    pub fn zeros(d: usize, depth: u32) -> Result<Self> {
        let tree = TreeConfig::new(depth)?;
        Ok(Self {
            d,
            depth,
            a: vec![DMatrix::zeros(d, d); tree.node_count()],
        })
    }

    /// Validates and symmetrizes every entry.
    pub fn new(d: usize, depth: u32, entries: Vec<(DyadicInterval, DMatrix<f64>)>) -> Result<Self> {
        let tree = TreeConfig::new(depth)?;
        let mut out = Self::zeros(d, depth)?;
        for (i, m) in entries {
            tree.check(&i)?;
            out.set(&i, m)?;
        }
        Ok(out)
    }

    pub fn from_fn(d: usize, depth: u32, f: impl Fn(&DyadicInterval) -> DMatrix<f64>) -> Result<Self> {
        let tree = TreeConfig::new(depth)?;
        Self::new(d, depth, tree.intervals().map(|i| (i, f(&i))).collect())
    }

    fn set(&mut self, i: &DyadicInterval, m: DMatrix<f64>) -> Result<()> {
        if m.nrows() != self.d || m.ncols() != self.d {
            return Err(Error::ShapeMismatch(format!(
                "entry on {i:?} is {}x{}, expected {}x{}",
                m.nrows(),
                m.ncols(),
                self.d,
                self.d
            )));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite entry on {i:?}")));
        }
        let scale = m.amax().max(1.0);
        if crate::linalg::asymmetry(&m) > SYMMETRY_TOL * scale {
            return Err(Error::InvalidInput(format!("entry on {i:?} is not symmetric")));
        }
        let m = symmetrize(&m);
        let min = sym_eigen(&m).min();
        if min < -PSD_TOL * scale {
            return Err(Error::InvalidInput(format!(
                "entry on {i:?} is not positive semi-definite (min eigenvalue {min:e})"
            )));
        }
        self.a[i.node_id()] = m;
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn get(&self, i: &DyadicInterval) -> &DMatrix<f64> {
        &self.a[i.node_id()]
    }

    pub fn scaled(&self, t: f64) -> Result<Self> {
        if !(t >= 0.0) {
            return Err(Error::BadParams(format!("scale must be nonnegative, got {t}")));
        }
        Ok(Self {
            a: self.a.iter().map(|m| m * t).collect(),
            ..self.clone()
        })
    }

    fn check_weight(&self, w: &WeightGrid) -> Result<()> {
        if w.d() != self.d || w.depth() != self.depth {
            return Err(Error::ShapeMismatch(format!(
                "sequence is d={}, depth={} but weight is d={}, depth={}",
                self.d,
                self.depth,
                w.d(),
                w.depth()
            )));
        }
        Ok(())
    }

    pub fn to_file(&self) -> CarlesonFile {
        CarlesonFile {
            d: self.d,
            depth: self.depth,
            entries: self
                .a
                .iter()
                .enumerate()
                .filter(|(_, m)| m.iter().any(|&x| x != 0.0))
                .map(|(id, m)| {
                    let i = DyadicInterval::from_node_id(id);
                    (i.level, i.index, m.transpose().iter().copied().collect())
                })
                .collect(),
        }
    }

    pub fn from_file(file: &CarlesonFile) -> Result<Self> {
        let mut entries = Vec::with_capacity(file.entries.len());
        for (level, index, values) in &file.entries {
            let i = DyadicInterval::new(*level, *index)?;
            if values.len() != file.d * file.d {
                return Err(Error::ShapeMismatch(format!(
                    "entry on {i:?} has {} values, expected {}",
                    values.len(),
                    file.d * file.d
                )));
            }
            entries.push((i, DMatrix::from_row_slice(file.d, file.d, values)));
        }
        Self::new(file.d, file.depth, entries)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("instance serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(&serde_json::from_str(text)?)
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarlesonFile {
    pub d: usize,
    pub depth: u32,
    /// `[level, index, row-major A_I]`
    pub entries: Vec<(u32, u64, Vec<f64>)>,
}

/// `max_J λ_max(⟨W⟩_J^{-1/2} [(1/|J|) Σ_{I⊆J} ⟨W⟩_I A_I ⟨W⟩_I] ⟨W⟩_J^{-1/2})`.
pub fn cet2_testing_constant(seq: &CarlesonInstance, w: &WeightGrid) -> Result<f64> {
    seq.check_weight(w)?;
    let tree = w.tree();
    let mut sums: Vec<DMatrix<f64>> = (0..tree.node_count())
        .map(|id| {
            let avg = w.average_unchecked(&DyadicInterval::from_node_id(id));
            &avg * &seq.a[id] * &avg
        })
        .collect();
    for id in (0..tree.internal_count()).rev() {
        let (l, r) = DyadicInterval::from_node_id(id).halves();
        sums[id] = &sums[id] + &sums[l.node_id()] + &sums[r.node_id()];
    }
    Ok((0..tree.node_count())
        .into_par_iter()
        .map(|id| {
            let j = DyadicInterval::from_node_id(id);
            let s = sym_inv_sqrt(&w.average_unchecked(&j));
            lambda_max(&(&s * &sums[id] * &s)) / j.measure()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(0.0, f64::max)
        .max(0.0))
}

/// `max_J (1/|J|) Σ_{I⊆J} ‖⟨W⟩_I^{1/2} A_I ⟨W⟩_I^{1/2}‖`.
pub fn cet1_testing_constant(seq: &CarlesonInstance, w: &WeightGrid) -> Result<f64> {
    seq.check_weight(w)?;
    let tree = w.tree();
    let mut sums: Vec<f64> = (0..tree.node_count())
        .into_par_iter()
        .map(|id| {
            let s = sym_sqrt(&w.average_unchecked(&DyadicInterval::from_node_id(id)));
            spectral_norm(&(&s * &seq.a[id] * &s))
        })
        .collect();
    for id in (0..tree.internal_count()).rev() {
        let (l, r) = DyadicInterval::from_node_id(id).halves();
        sums[id] += sums[l.node_id()] + sums[r.node_id()];
    }
    Ok((0..tree.node_count())
        .map(|id| sums[id] / DyadicInterval::from_node_id(id).measure())
        .fold(0.0, f64::max))
}

/// The whitened quadratic form `Σ_I P_Iᵀ A_I P_I`, where
/// `P_I g = (1/|I|) Σ_{L⊆I} |L|^{1/2} W(L)^{1/2} g(L)` so that `‖g‖ = ‖f‖_{L²(W⁻¹)}`.
pub fn embedding_form(seq: &CarlesonInstance, w: &WeightGrid) -> Result<DMatrix<f64>> {
    seq.check_weight(w)?;
    let d = seq.d;
    let depth = seq.depth;
    let tree = w.tree();
    let leaf_size = (-(depth as f64)).exp2();
    let roots: Vec<DMatrix<f64>> = w
        .leaves()
        .iter()
        .map(|m| sym_sqrt(m) * leaf_size.sqrt())
        .collect();
    let n = d << depth;
    let mut q = DMatrix::zeros(n, n);
    for i in tree.intervals() {
        let a = &seq.a[i.node_id()];
        if a.iter().all(|&x| x == 0.0) {
            continue;
        }
        let range = i.leaf_range(depth);
        let size = i.measure();
        let mut p = DMatrix::zeros(d, range.len() * d);
        for (k, leaf) in range.clone().enumerate() {
            p.view_mut((0, k * d), (d, d)).copy_from(&(&roots[leaf] / size));
        }
        let block = p.transpose() * a * &p;
        let start = range.start * d;
        let mut view = q.view_mut((start, start), (block.nrows(), block.ncols()));
        view += &block;
    }
    Ok(symmetrize(&q))
}

/// Smallest `C` with `Σ_I ⟨A_I⟨f⟩_I, ⟨f⟩_I⟩ ≤ C ‖f‖²_{L²(W⁻¹)}` on the tree.
pub fn embedding_sharp_constant(seq: &CarlesonInstance, w: &WeightGrid) -> Result<f64> {
    w.inverse()?;
    Ok(crate::linalg::top_eigen_psd(&embedding_form(seq, w)?).0)
}

/// `λ_max(⟨W⟩_I^{1/2} A_I ⟨W⟩_I^{1/2}) / |I|`: what a single term alone forces.
pub fn single_term_constant(seq: &CarlesonInstance, w: &WeightGrid, i: &DyadicInterval) -> Result<f64> {
    seq.check_weight(w)?;
    w.tree().check(i)?;
    let s = sym_sqrt(&w.average_unchecked(i));
    Ok(lambda_max(&(&s * seq.get(i) * &s)).max(0.0) / i.measure())
}

/// `A_K = Σ_{L ⊆ K, |L| = 2^{-r}|K|, ℓ} ⟨W⟩_K⁻¹ α α* ⟨W⟩_K⁻¹` with
/// `α_{L,ℓ} = ∫_K W T_V* h_L^{V,ℓ}`.
pub fn carleson_from_operator(
    t: &BandOperator,
    w: &WeightGrid,
    v: &WeightGrid,
    r: u32,
) -> Result<CarlesonInstance> {
    let (d, depth) = (t.d(), t.depth());
    if !w.same_shape(v) || w.d() != d || w.depth() != depth {
        return Err(Error::ShapeMismatch("operator and weights disagree".into()));
    }
    if depth <= r {
        return Err(Error::BadParams(format!(
            "radius {r} needs depth > {r}, got {depth}"
        )));
    }
    let sys_v = HaarSystem::build(v)?;
    let tree = w.tree();
    let terms: Vec<(usize, DMatrix<f64>)> = tree
        .internal_intervals()
        .filter(|l| l.level >= r)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|l| {
            let k = l.ancestor(r).expect("level ≥ r");
            let avg_inv = sym_inv(&w.average_unchecked(&k));
            let mut acc = DMatrix::zeros(d, d);
            for c in 0..d {
                let h = sys_v.basis_function(haar_slot(d, &l, c));
                let g = t.weighted_adjoint_apply(v, &h).expect("shapes checked");
                let alpha = &g.weighted_integrals(w).expect("shapes checked")[k.node_id()];
                let beta = &avg_inv * alpha;
                acc += &beta * beta.transpose();
            }
            (k.node_id(), acc)
        })
        .collect();
    let mut a = vec![DMatrix::zeros(d, d); tree.node_count()];
    for (id, m) in terms {
        a[id] += m;
    }
    Ok(CarlesonInstance {
        d,
        depth,
        a: a.iter().map(symmetrize).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingTree {
    pub root: DyadicInterval,
    pub lambda: f64,
    /// `𝒥⁰ = {root}, 𝒥¹, …`; empty generations are not stored.
    pub generations: Vec<Vec<DyadicInterval>>,
    /// Total measure of each generation.
    pub measures: Vec<f64>,
}

/// True when `J` stops relative to `I`.
fn stops(w: &WeightGrid, avg_i: &DMatrix<f64>, j: &DyadicInterval, lambda: f64) -> bool {
    let avg_j = w.average_unchecked(j);
    let down = spectral_norm(&(sym_inv_sqrt(&avg_j) * sym_sqrt(avg_i)));
    let up = spectral_norm(&(sym_sqrt(&avg_j) * sym_inv_sqrt(avg_i)));
    down * down > lambda || up * up > lambda
}

/// Maximal `J ⊊ I` where `⟨W⟩_J` leaves the `λ`-neighbourhood of `⟨W⟩_I`.
pub fn stopping_children(w: &WeightGrid, i: &DyadicInterval, lambda: f64) -> Vec<DyadicInterval> {
    let depth = w.depth();
    let avg_i = w.average_unchecked(i);
    let mut out = Vec::new();
    let mut stack = Vec::new();
    if i.level < depth {
        let (l, r) = i.halves();
        stack.push(r);
        stack.push(l);
    }
    while let Some(j) = stack.pop() {
        if stops(w, &avg_i, &j, lambda) {
            out.push(j);
        } else if j.level < depth {
            let (l, r) = j.halves();
            stack.push(r);
            stack.push(l);
        }
    }
    out.sort();
    out
}

pub fn build_stopping_tree(w: &WeightGrid, root: &DyadicInterval, lambda: f64) -> Result<StoppingTree> {
    w.tree().check(root)?;
    if !(lambda > 1.0) || !lambda.is_finite() {
        return Err(Error::BadParams(format!("lambda must be a finite number > 1, got {lambda}")));
    }
    let mut generations = vec![vec![*root]];
    loop {
        let last = generations.last().expect("nonempty");
        let next: Vec<DyadicInterval> = last
            .par_iter()
            .map(|i| stopping_children(w, i, lambda))
            .collect::<Vec<_>>()
            .concat();
        if next.is_empty() {
            break;
        }
        generations.push(next);
    }
    let measures = generations
        .iter()
        .map(|g| g.iter().map(|i| i.measure()).sum())
        .collect();
    Ok(StoppingTree {
        root: *root,
        lambda,
        generations,
        measures,
    })
}

/// `|𝒥^j| / |root|` for `j ≥ 1`.
pub fn stopping_decay(tree: &StoppingTree) -> Vec<f64> {
    let size = tree.root.measure();
    tree.measures.iter().skip(1).map(|m| m / size).collect()
}

/// True when generation `j` has relative measure at most `2^{-j}`.
pub fn decays_geometrically(decay: &[f64]) -> bool {
    decay
        .iter()
        .enumerate()
        .all(|(k, &m)| m <= (-((k + 1) as f64)).exp2() * (1.0 + 1e-12))
}

/// Multipliers `m` tried in `λ = m·d·[W]_{A₂}`.
pub const LAMBDA_MULTIPLIERS: [f64; 5] = [4.0, 8.0, 16.0, 32.0, 64.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSearch {
    pub a2: f64,
    /// Smallest passing multiplier of `d·[W]_{A₂}`, if any.
    pub multiplier: Option<f64>,
    pub lambda: Option<f64>,
    pub decay: Vec<f64>,
}

/// Escalates `λ` through [`LAMBDA_MULTIPLIERS`] until the stopping tree
/// from the root decays like `2^{-j}`.
pub fn search_lambda(w: &WeightGrid) -> Result<LambdaSearch> {
    let a2 = w.a2_characteristic()?;
    let base = w.d() as f64 * a2;
    let mut last = Vec::new();
    for m in LAMBDA_MULTIPLIERS {
        let tree = build_stopping_tree(w, &DyadicInterval::ROOT, m * base)?;
        let decay = stopping_decay(&tree);
        if decays_geometrically(&decay) {
            return Ok(LambdaSearch {
                a2,
                multiplier: Some(m),
                lambda: Some(m * base),
                decay,
            });
        }
        last = decay;
    }
    Ok(LambdaSearch {
        a2,
        multiplier: None,
        lambda: None,
        decay: last,
    })
}
