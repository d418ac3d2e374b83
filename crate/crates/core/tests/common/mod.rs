//! Dense leaf-space oracles shared by the integration tests. Functions are
//! flat vectors of leaf values (leaf-major), `L²` pairings carry the leaf
//! measure `μ = 2^{-N}`, and operators are plain matrices on that space.

#![allow(dead_code)]

use dyadic_t1::{BandOperator, DyadicInterval, WeightGrid};
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

pub fn leaf_measure(depth: u32) -> f64 {
    1.0 / (1u64 << depth) as f64
}

/// Block diagonal matrix of leaf values.
pub fn leaf_weight(w: &WeightGrid) -> DMatrix<f64> {
    let d = w.d();
    let n = d << w.depth();
    let mut m = DMatrix::zeros(n, n);
    for (k, leaf) in w.leaves().iter().enumerate() {
        m.view_mut((k * d, k * d), (d, d)).copy_from(leaf);
    }
    m
}

pub fn node_count(depth: u32) -> usize {
    (2usize << depth) - 1
}

pub fn interval(id: usize) -> DyadicInterval {
    let level = (usize::BITS - 1 - (id + 1).leading_zeros()) as u32;
    DyadicInterval::new(level, (id + 1 - (1usize << level)) as u64).unwrap()
}

pub fn leaves_of(i: &DyadicInterval, depth: u32) -> std::ops::Range<usize> {
    let span = 1usize << (depth - i.level);
    let start = i.index as usize * span;
    start..start + span
}

/// `J ⊆ I`.
pub fn inside(j: &DyadicInterval, i: &DyadicInterval) -> bool {
    j.level >= i.level && (j.index >> (j.level - i.level)) == i.index
}

pub fn indicator(d: usize, depth: u32, i: &DyadicInterval, a: usize) -> DVector<f64> {
    let mut v = DVector::zeros(d << depth);
    for leaf in leaves_of(i, depth) {
        v[leaf * d + a] = 1.0;
    }
    v
}

/// `∫_I W` from the leaf values.
pub fn integral(w: &WeightGrid, i: &DyadicInterval) -> DMatrix<f64> {
    let mu = leaf_measure(w.depth());
    let mut s = DMatrix::zeros(w.d(), w.d());
    for leaf in leaves_of(i, w.depth()) {
        s += w.leaves()[leaf].clone() * mu;
    }
    s
}

/// Unweighted Haar basis in closed form: slot `id(J)·d + j` is
/// `|J|^{-1/2}(𝟏_{J₊} − 𝟏_{J₋}) e_j`, the last `d` slots are the constants.
pub fn standard_basis(d: usize, depth: u32) -> DMatrix<f64> {
    let n = d << depth;
    let mut s = DMatrix::zeros(n, n);
    let internal = (1usize << depth) - 1;
    for id in 0..internal {
        let j = interval(id);
        let size = (-(j.level as f64)).exp2();
        let leaves = leaves_of(&j, depth);
        let half = leaves.len() / 2;
        for c in 0..d {
            for (k, leaf) in leaves.clone().enumerate() {
                let sign = if k < half { -1.0 } else { 1.0 };
                s[(leaf * d + c, id * d + c)] = sign / size.sqrt();
            }
        }
    }
    for c in 0..d {
        for leaf in 0..1usize << depth {
            s[(leaf * d + c, internal * d + c)] = 1.0;
        }
    }
    s
}

/// The operator acting on leaf values: `f ↦ Σ ⟨T h_in, h_out⟩ ⟨f, h_in⟩ h_out`.
pub fn leaf_operator(t: &BandOperator) -> DMatrix<f64> {
    let (d, depth) = (t.d(), t.depth());
    let n = d << depth;
    let mut coeff = DMatrix::zeros(n, n);
    for &(i, o, v) in t.entries() {
        coeff[(o, i)] += v;
    }
    let s = standard_basis(d, depth);
    &s * coeff * s.transpose() * leaf_measure(depth)
}

/// Everything needed to pair `T_W` against weighted Haar functions densely.
pub struct DensePair {
    pub d: usize,
    pub depth: u32,
    pub mu: f64,
    pub wd: DMatrix<f64>,
    pub vd: DMatrix<f64>,
    /// `T M_W` on leaf values.
    pub tw: DMatrix<f64>,
    /// `Tᵀ M_V` on leaf values.
    pub tv_star: DMatrix<f64>,
}

impl DensePair {
    pub fn new(t: &BandOperator, w: &WeightGrid, v: &WeightGrid) -> Self {
        let wd = leaf_weight(w);
        let vd = leaf_weight(v);
        let tl = leaf_operator(t);
        Self {
            d: t.d(),
            depth: t.depth(),
            mu: leaf_measure(t.depth()),
            tw: &tl * &wd,
            tv_star: tl.transpose() * &vd,
            wd,
            vd,
        }
    }

    /// `⟨T_W b_k, c_l⟩_{L²(V)}` for basis matrices `b` (domain) and `c` (target).
    pub fn matrix_form(&self, b_w: &DMatrix<f64>, b_v: &DMatrix<f64>) -> DMatrix<f64> {
        b_v.transpose() * &self.vd * &self.tw * b_w * self.mu
    }
}

/// Largest generalized eigenvalue of `q x = λ g x` with `g` positive definite.
pub fn generalized_max(q: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
    let l = Cholesky::new(g.clone()).expect("positive definite").l();
    let li = l.clone().try_inverse().expect("invertible");
    let m = &li * q * li.transpose();
    let m = (&m + m.transpose()) * 0.5;
    SymmetricEigen::new(m).eigenvalues.max()
}

/// `sup |⟨M e, ν⟩| / (⟨g_e e, e⟩^{1/2} ⟨g_ν ν, ν⟩^{1/2})`.
pub fn whitened_norm(m: &DMatrix<f64>, g_e: &DMatrix<f64>, g_nu: &DMatrix<f64>) -> f64 {
    let le = Cholesky::new(g_e.clone()).expect("pd").l().try_inverse().unwrap();
    let ln = Cholesky::new(g_nu.clone()).expect("pd").l().try_inverse().unwrap();
    let x = ln * m * le.transpose();
    x.svd(false, false).singular_values.max()
}

/// One-sided (Hestenes) Jacobi sweeps over row pairs; returns the largest singular value.
pub fn jacobi_sigma_max(m: &DMatrix<f64>) -> f64 {
    let mut a = m.transpose();
    let rows = a.nrows();
    let cols = a.ncols();
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..rows {
            for q in p + 1..rows {
                let (mut app, mut aqq, mut apq) = (0.0, 0.0, 0.0);
                for k in 0..cols {
                    app += a[(p, k)] * a[(p, k)];
                    aqq += a[(q, k)] * a[(q, k)];
                    apq += a[(p, k)] * a[(q, k)];
                }
                if apq == 0.0 {
                    continue;
                }
                off = off.max(apq.abs() / (app * aqq).sqrt());
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..cols {
                    let x = a[(p, k)];
                    let y = a[(q, k)];
                    a[(p, k)] = c * x - s * y;
                    a[(q, k)] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    (0..rows).map(|r| a.row(r).norm()).fold(0.0, f64::max)
}

/// Vanishing rule for `⟨T_W 𝟏_I e, h_J⟩` with radius `r`; `relaxed` keeps
/// only pairs with `|J| ≤ |I|`.
pub fn must_vanish(i: &DyadicInterval, j: &DyadicInterval, r: u32, relaxed: bool) -> bool {
    let allowed = if relaxed { j.level >= i.level } else { j.level + 1 >= i.level };
    if !allowed {
        return false;
    }
    let far = if i.level > r {
        let top = DyadicInterval::new(i.level - r - 1, i.index >> (r + 1)).unwrap();
        !inside(j, &top)
    } else {
        false
    };
    far || (j.level >= i.level + r && !inside(j, i))
}

/// `⟨W⟩_J^{-1/2}`-free stopping test through Cholesky factors: `J` stops
/// below `I` when either `⟨W⟩_J⁻¹⟨W⟩_I` or `⟨W⟩_I⁻¹⟨W⟩_J` has an eigenvalue above `λ`.
pub fn stops(avg_i: &DMatrix<f64>, avg_j: &DMatrix<f64>, lambda: f64) -> bool {
    generalized_max(avg_i, avg_j) > lambda || generalized_max(avg_j, avg_i) > lambda
}

pub fn average(w: &WeightGrid, i: &DyadicInterval) -> DMatrix<f64> {
    integral(w, i) / (-(i.level as f64)).exp2()
}

/// Generation measures of the stopping construction from the root.
pub fn stopping_measures(w: &WeightGrid, lambda: f64) -> Vec<f64> {
    let depth = w.depth();
    let mut measures = vec![1.0];
    let mut current = vec![DyadicInterval::new(0, 0).unwrap()];
    loop {
        let mut next = Vec::new();
        for i in &current {
            let avg_i = average(w, i);
            // breadth-first over descendants, stopping at the first interval that jumps
            let mut frontier = vec![*i];
            while let Some(k) = frontier.pop() {
                if k.level == depth {
                    continue;
                }
                for child in [
                    DyadicInterval::new(k.level + 1, 2 * k.index).unwrap(),
                    DyadicInterval::new(k.level + 1, 2 * k.index + 1).unwrap(),
                ] {
                    if stops(&avg_i, &average(w, &child), lambda) {
                        next.push(child);
                    } else {
                        frontier.push(child);
                    }
                }
            }
        }
        if next.is_empty() {
            return measures;
        }
        measures.push(next.iter().map(|i| (-(i.level as f64)).exp2()).sum());
        current = next;
    }
}
