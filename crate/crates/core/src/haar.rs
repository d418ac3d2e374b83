//! Haar systems adapted to a matrix weight, plus the plain (unweighted)
//! vector Haar transform that band operators are written in.
//!
//! For an internal interval `J` the adapted functions are
//!
//! ```text
//! h_J^j = (w_J^j)^{-1} ( W(J₊)⁻¹W(J₋) v_J^j 𝟏_{J₊} − v_J^j 𝟏_{J₋} )
//! ```
//!
//! where `v_J^j` are orthonormal eigenvectors of
//! `M_J = W(J₋)W(J₊)⁻¹W(J₋) + W(J₋)` (equal to `W(J)W(J₊)⁻¹W(J₋)`, but
//! symmetric as written) and `w_J^j = ‖M_J^{1/2} v_J^j‖`. The truncated tree
//! adds a root block `u_i = W(root)^{-1/2} e_i` of constants.
//!
//! Coefficient vectors use one canonical order: internal intervals
//! breadth-first with `j` ascending inside each, then the root block.

use nalgebra::{DMatrix, DVector, DVectorView, DVectorViewMut};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::{DyadicInterval, TreeConfig};
use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, sym_inv, sym_inv_sqrt, symmetrize};
use crate::weight::WeightGrid;

/// Vector-valued function constant on each leaf, stored leaf-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedFunction {
    d: usize,
    depth: u32,
    values: DVector<f64>,
}

impl WeightedFunction {
    pub fn zeros(d: usize, depth: u32) -> Self {
        Self {
            d,
            depth,
            values: DVector::zeros(d << depth),
        }
    }

    pub fn from_flat(d: usize, depth: u32, values: DVector<f64>) -> Result<Self> {
        if values.len() != d << depth {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values for d={d}, depth={depth}, got {}",
                d << depth,
                values.len()
            )));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite function value".into()));
        }
        Ok(Self { d, depth, values })
    }

    pub fn from_leaves(d: usize, depth: u32, leaves: &[DVector<f64>]) -> Result<Self> {
        if leaves.len() != 1 << depth || leaves.iter().any(|v| v.len() != d) {
            return Err(Error::ShapeMismatch("leaf vectors do not match d/depth".into()));
        }
        let flat = DVector::from_iterator(d << depth, leaves.iter().flat_map(|v| v.iter().copied()));
        Self::from_flat(d, depth, flat)
    }

    /// `e·𝟏_I`.
    pub fn indicator(d: usize, depth: u32, i: &DyadicInterval, e: &DVector<f64>) -> Self {
        let mut f = Self::zeros(d, depth);
        for k in i.leaf_range(depth) {
            f.leaf_mut(k).copy_from(e);
        }
        f
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn leaf(&self, k: usize) -> DVectorView<'_, f64> {
        self.values.rows(k * self.d, self.d)
    }

    pub fn leaf_mut(&mut self, k: usize) -> DVectorViewMut<'_, f64> {
        self.values.rows_mut(k * self.d, self.d)
    }

    fn check_weight(&self, w: &WeightGrid) -> Result<()> {
        if w.d() != self.d || w.depth() != self.depth {
            return Err(Error::ShapeMismatch(format!(
                "function is d={}, depth={} but weight is d={}, depth={}",
                self.d,
                self.depth,
                w.d(),
                w.depth()
            )));
        }
        Ok(())
    }

    /// `⟨f, g⟩_{L²(W)} = Σ_L |L| ⟨W(L) f(L), g(L)⟩`.
    pub fn inner(&self, w: &WeightGrid, other: &WeightedFunction) -> Result<f64> {
        self.check_weight(w)?;
        other.check_weight(w)?;
        let measure = (-(self.depth as f64)).exp2();
        Ok((0..1usize << self.depth)
            .map(|k| (w.leaf(k) * self.leaf(k)).dot(&other.leaf(k)))
            .sum::<f64>()
            * measure)
    }

    pub fn norm_sq(&self, w: &WeightGrid) -> Result<f64> {
        self.inner(w, self)
    }

    /// Plain `L²` inner product.
    pub fn dot(&self, other: &WeightedFunction) -> f64 {
        self.values.dot(&other.values) * (-(self.depth as f64)).exp2()
    }

    /// Leafwise `W(x) f(x)`.
    pub fn apply_weight(&self, w: &WeightGrid) -> Result<WeightedFunction> {
        self.check_weight(w)?;
        let mut out = Self::zeros(self.d, self.depth);
        for k in 0..1usize << self.depth {
            let v = w.leaf(k) * self.leaf(k);
            out.leaf_mut(k).copy_from(&v);
        }
        Ok(out)
    }

    /// `𝟏_I f`.
    pub fn restricted(&self, i: &DyadicInterval) -> WeightedFunction {
        let mut out = Self::zeros(self.d, self.depth);
        for k in i.leaf_range(self.depth) {
            out.leaf_mut(k).copy_from(&self.leaf(k));
        }
        out
    }

    /// `∫_I W f` for every node, breadth-first.
    pub fn weighted_integrals(&self, w: &WeightGrid) -> Result<Vec<DVector<f64>>> {
        self.check_weight(w)?;
        let tree = w.tree();
        let mut out = vec![DVector::zeros(self.d); tree.node_count()];
        for leaf in tree.leaves() {
            let k = leaf.index as usize;
            out[leaf.node_id()] = w.leaf(k) * self.leaf(k) * leaf.measure();
        }
        for id in (0..tree.internal_count()).rev() {
            let (l, r) = DyadicInterval::from_node_id(id).halves();
            out[id] = &out[l.node_id()] + &out[r.node_id()];
        }
        Ok(out)
    }

    /// `∫_I f` for every node (unweighted).
    pub fn integrals(&self) -> Vec<DVector<f64>> {
        let tree = TreeConfig { depth: self.depth };
        let mut out = vec![DVector::zeros(self.d); tree.node_count()];
        for leaf in tree.leaves() {
            out[leaf.node_id()] = self.leaf(leaf.index as usize) * leaf.measure();
        }
        for id in (0..tree.internal_count()).rev() {
            let (l, r) = DyadicInterval::from_node_id(id).halves();
            out[id] = &out[l.node_id()] + &out[r.node_id()];
        }
        out
    }
}

/// Position of a basis element in the canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BasisNode {
    Haar(DyadicInterval),
    Root,
}

pub fn basis_len(d: usize, depth: u32) -> usize {
    d << depth
}

pub fn haar_slot(d: usize, j: &DyadicInterval, component: usize) -> usize {
    j.node_id() * d + component
}

pub fn root_slot(d: usize, depth: u32, component: usize) -> usize {
    ((1usize << depth) - 1) * d + component
}

pub fn slot_of(d: usize, depth: u32, k: usize) -> (BasisNode, usize) {
    let id = k / d;
    let component = k % d;
    if id < (1usize << depth) - 1 {
        (BasisNode::Haar(DyadicInterval::from_node_id(id)), component)
    } else {
        (BasisNode::Root, component)
    }
}

pub fn slot_index(d: usize, depth: u32, node: BasisNode, component: usize) -> usize {
    match node {
        BasisNode::Haar(j) => haar_slot(d, &j, component),
        BasisNode::Root => root_slot(d, depth, component),
    }
}

/// Coefficients in the canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffVector {
    pub d: usize,
    pub depth: u32,
    pub values: DVector<f64>,
}

impl CoeffVector {
    pub fn zeros(d: usize, depth: u32) -> Self {
        Self {
            d,
            depth,
            values: DVector::zeros(basis_len(d, depth)),
        }
    }

    pub fn unit(d: usize, depth: u32, k: usize) -> Self {
        let mut c = Self::zeros(d, depth);
        c.values[k] = 1.0;
        c
    }

    pub fn get(&self, node: BasisNode, component: usize) -> f64 {
        self.values[slot_index(self.d, self.depth, node, component)]
    }

    /// The Haar part only (root block dropped).
    pub fn haar_part(&self) -> DVectorView<'_, f64> {
        self.values.rows(0, root_slot(self.d, self.depth, 0))
    }

    pub fn root_part(&self) -> DVectorView<'_, f64> {
        self.values.rows(root_slot(self.d, self.depth, 0), self.d)
    }
}

/// Adapted functions on one internal interval.
#[derive(Debug, Clone)]
pub struct HaarBlock {
    pub interval: DyadicInterval,
    /// Eigenvalues of `M_J`, descending.
    pub eigenvalues: Vec<f64>,
    /// Columns `v_J^j`.
    pub vectors: DMatrix<f64>,
    /// `w_J^j`.
    pub w: Vec<f64>,
    /// Columns `h_J^j(J₋)`.
    pub left: DMatrix<f64>,
    /// Columns `h_J^j(J₊)`.
    pub right: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct HaarSystem {
    weight: WeightGrid,
    blocks: Vec<HaarBlock>,
    /// Columns `u_i`.
    root: DMatrix<f64>,
}

impl HaarSystem {
    pub fn build(weight: &WeightGrid) -> Result<Self> {
        let tree = weight.tree();
        let blocks = (0..tree.internal_count())
            .into_par_iter()
            .map(|id| build_block(weight, DyadicInterval::from_node_id(id)))
            .collect::<Result<Vec<_>>>()?;
        let root = sym_inv_sqrt(weight.integral_at(0));
        Ok(Self {
            weight: weight.clone(),
            blocks,
            root,
        })
    }

    pub fn weight(&self) -> &WeightGrid {
        &self.weight
    }

    pub fn d(&self) -> usize {
        self.weight.d()
    }

    pub fn depth(&self) -> u32 {
        self.weight.depth()
    }

    pub fn len(&self) -> usize {
        basis_len(self.d(), self.depth())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn blocks(&self) -> &[HaarBlock] {
        &self.blocks
    }

    pub fn block(&self, j: &DyadicInterval) -> &HaarBlock {
        &self.blocks[j.node_id()]
    }

    pub fn root_block(&self) -> &DMatrix<f64> {
        &self.root
    }

    /// Leaf values of the `k`-th basis function, straight from the block data.
    pub fn basis_function(&self, k: usize) -> WeightedFunction {
        let (d, depth) = (self.d(), self.depth());
        let mut f = WeightedFunction::zeros(d, depth);
        match slot_of(d, depth, k) {
            (BasisNode::Haar(j), c) => {
                let block = self.block(&j);
                let (lo, hi) = j.halves();
                for leaf in lo.leaf_range(depth) {
                    f.leaf_mut(leaf).copy_from(&block.left.column(c));
                }
                for leaf in hi.leaf_range(depth) {
                    f.leaf_mut(leaf).copy_from(&block.right.column(c));
                }
            }
            (BasisNode::Root, c) => {
                for leaf in 0..1usize << depth {
                    f.leaf_mut(leaf).copy_from(&self.root.column(c));
                }
            }
        }
        f
    }

    /// Dense matrix whose columns are the flattened basis functions.
    pub fn basis_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut b = DMatrix::zeros(n, n);
        for k in 0..n {
            b.set_column(k, self.basis_function(k).values());
        }
        b
    }

    /// Gram matrix of the whole system in `L²(W)`.
    pub fn gram(&self) -> DMatrix<f64> {
        let (d, depth) = (self.d(), self.depth());
        let n = self.len();
        let measure = (-(depth as f64)).exp2();
        let b = self.basis_matrix();
        let mut wb = DMatrix::zeros(n, n);
        for leaf in 0..1usize << depth {
            let rows = b.rows(leaf * d, d);
            let block = self.weight.leaf(leaf) * rows * measure;
            wb.rows_mut(leaf * d, d).copy_from(&block);
        }
        b.transpose() * wb
    }

    fn check(&self, f: &WeightedFunction) -> Result<()> {
        if f.d() != self.d() || f.depth() != self.depth() {
            return Err(Error::ShapeMismatch(format!(
                "function is d={}, depth={} but system is d={}, depth={}",
                f.d(),
                f.depth(),
                self.d(),
                self.depth()
            )));
        }
        Ok(())
    }

    /// `c_{(J,j)} = ⟨f, h_J^j⟩_{L²(W)}`, root entries `⟨f, u_i⟩_{L²(W)}`.
    pub fn analyze(&self, f: &WeightedFunction) -> Result<CoeffVector> {
        self.check(f)?;
        let wf = f.weighted_integrals(&self.weight)?;
        Ok(self.analyze_integrals(&wf))
    }

    /// Analysis from precomputed node integrals `∫_I W f`.
    pub(crate) fn analyze_integrals(&self, wf: &[DVector<f64>]) -> CoeffVector {
        let (d, depth) = (self.d(), self.depth());
        let mut c = CoeffVector::zeros(d, depth);
        for block in &self.blocks {
            let (lo, hi) = block.interval.halves();
            let coeffs = block.left.transpose() * &wf[lo.node_id()]
                + block.right.transpose() * &wf[hi.node_id()];
            c.values
                .rows_mut(block.interval.node_id() * d, d)
                .copy_from(&coeffs);
        }
        let root = self.root.transpose() * &wf[0];
        c.values.rows_mut(root_slot(d, depth, 0), d).copy_from(&root);
        c
    }

    /// Leaf values of `Σ c_k b_k`.
    pub fn synthesize(&self, c: &CoeffVector) -> Result<WeightedFunction> {
        let (d, depth) = (self.d(), self.depth());
        if c.d != d || c.depth != depth || c.values.len() != self.len() {
            return Err(Error::ShapeMismatch("coefficient vector does not match system".into()));
        }
        let tree = self.weight.tree();
        let mut acc = vec![DVector::zeros(d); tree.node_count()];
        acc[0] = &self.root * c.values.rows(root_slot(d, depth, 0), d);
        for block in &self.blocks {
            let id = block.interval.node_id();
            let cj = c.values.rows(id * d, d);
            let (lo, hi) = block.interval.halves();
            acc[lo.node_id()] = &acc[id] + &block.left * &cj;
            acc[hi.node_id()] = &acc[id] + &block.right * &cj;
        }
        let mut f = WeightedFunction::zeros(d, depth);
        for leaf in tree.leaves() {
            f.leaf_mut(leaf.index as usize).copy_from(&acc[leaf.node_id()]);
        }
        Ok(f)
    }

    /// `max ‖W(J±)^{1/2} h_J^j(J±)‖` over every block, component and half.
    pub fn haar_bound_certificate(&self) -> f64 {
        let mut worst = 0.0f64;
        for block in &self.blocks {
            let (lo, hi) = block.interval.halves();
            let wl = self.weight.integral_at(lo.node_id());
            let wr = self.weight.integral_at(hi.node_id());
            for j in 0..self.d() {
                let l = block.left.column(j);
                let r = block.right.column(j);
                worst = worst.max((wl * l).dot(&l).max(0.0).sqrt());
                worst = worst.max((wr * r).dot(&r).max(0.0).sqrt());
            }
        }
        worst
    }

    pub fn export(&self) -> HaarSystemExport {
        let columns = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            m.column_iter().map(|c| c.iter().copied().collect()).collect()
        };
        HaarSystemExport {
            d: self.d(),
            depth: self.depth(),
            intervals: self
                .blocks
                .iter()
                .map(|b| HaarBlockExport {
                    interval: b.interval,
                    eigenvalues: b.eigenvalues.clone(),
                    v: columns(&b.vectors),
                    w: b.w.clone(),
                    left: columns(&b.left),
                    right: columns(&b.right),
                })
                .collect(),
            root: columns(&self.root),
        }
    }
}

fn build_block(weight: &WeightGrid, interval: DyadicInterval) -> Result<HaarBlock> {
    let (lo, hi) = interval.halves();
    let w_lo = weight.integral_at(lo.node_id());
    let w_hi_inv = sym_inv(weight.integral_at(hi.node_id()));
    let transfer = &w_hi_inv * w_lo;
    let m = symmetrize(&(w_lo * &transfer + w_lo));
    let eig = sym_eigen(&m);
    if eig.min() <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "adapted Haar matrix on {interval:?} is not positive definite"
        )));
    }
    let m_sqrt = eig.map(f64::sqrt);
    let d = weight.d();
    let mut w = Vec::with_capacity(d);
    let mut left = DMatrix::zeros(d, d);
    let mut right = DMatrix::zeros(d, d);
    for j in 0..d {
        let v = eig.vectors.column(j);
        let wj = (&m_sqrt * v).norm();
        left.set_column(j, &(-v / wj));
        right.set_column(j, &(&transfer * v / wj));
        w.push(wj);
    }
    Ok(HaarBlock {
        interval,
        eigenvalues: eig.values.clone(),
        vectors: eig.vectors,
        w,
        left,
        right,
    })
}

/// `E_I^W f = ⟨W⟩_I⁻¹⟨Wf⟩_I 𝟏_I`.
pub fn weighted_expectation(
    w: &WeightGrid,
    f: &WeightedFunction,
    i: &DyadicInterval,
) -> Result<WeightedFunction> {
    w.tree().check(i)?;
    let x = expectation_vector(w, &f.weighted_integrals(w)?, i);
    Ok(WeightedFunction::indicator(w.d(), w.depth(), i, &x))
}

/// `W(I)⁻¹ ∫_I W f` from precomputed node integrals.
pub(crate) fn expectation_vector(
    w: &WeightGrid,
    wf: &[DVector<f64>],
    i: &DyadicInterval,
) -> DVector<f64> {
    sym_inv(w.integral_at(i.node_id())) * &wf[i.node_id()]
}

/// Plain vector Haar coefficients `⟨g, h_J e_j⟩` and `⟨g, 𝟏 e_i⟩` in the
/// canonical order.
pub fn standard_analyze(g: &WeightedFunction) -> CoeffVector {
    let (d, depth) = (g.d(), g.depth());
    let ints = g.integrals();
    let mut c = CoeffVector::zeros(d, depth);
    for id in 0..(1usize << depth) - 1 {
        let j = DyadicInterval::from_node_id(id);
        let (lo, hi) = j.halves();
        let scale = 1.0 / j.measure().sqrt();
        let coeffs = (&ints[hi.node_id()] - &ints[lo.node_id()]) * scale;
        c.values.rows_mut(id * d, d).copy_from(&coeffs);
    }
    c.values.rows_mut(root_slot(d, depth, 0), d).copy_from(&ints[0]);
    c
}

/// Inverse of [`standard_analyze`].
pub fn standard_synthesize(c: &CoeffVector) -> WeightedFunction {
    let (d, depth) = (c.d, c.depth);
    let tree = TreeConfig { depth };
    let mut acc = vec![DVector::zeros(d); tree.node_count()];
    acc[0] = c.values.rows(root_slot(d, depth, 0), d).into_owned();
    for id in 0..tree.internal_count() {
        let j = DyadicInterval::from_node_id(id);
        let (lo, hi) = j.halves();
        let step = c.values.rows(id * d, d) / j.measure().sqrt();
        acc[lo.node_id()] = &acc[id] - &step;
        acc[hi.node_id()] = &acc[id] + &step;
    }
    let mut f = WeightedFunction::zeros(d, depth);
    for leaf in tree.leaves() {
        f.leaf_mut(leaf.index as usize).copy_from(&acc[leaf.node_id()]);
    }
    f
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HaarBlockExport {
    pub interval: DyadicInterval,
    pub eigenvalues: Vec<f64>,
    pub v: Vec<Vec<f64>>,
    pub w: Vec<f64>,
    pub left: Vec<Vec<f64>>,
    pub right: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HaarSystemExport {
    pub d: usize,
    pub depth: u32,
    pub intervals: Vec<HaarBlockExport>,
    pub root: Vec<Vec<f64>>,
}
