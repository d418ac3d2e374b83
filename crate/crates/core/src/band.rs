//! Band operators on the truncated tree.
//!
//! An operator is stored as a sparse table of coefficients
//! `⟨T b_in, b_out⟩_{L²}` in the plain orthonormal basis
//! `{h_I e_i} ∪ {𝟏 e_i}`, keyed by canonical slot indices (see
//! [`crate::haar`]). The constant block behaves like a parent of the root
//! one level up: its distance to `h_J` is `level(J) + 1`, and to itself 0.
//! With that convention a truncated band operator is the compression of a
//! genuine band operator, so every band operator of radius `r` is
//! well-localized with radius `r` on the finite tree as well.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::{DyadicInterval, TreeConfig};
use crate::error::{Error, Result};
use crate::haar::{
    basis_len, haar_slot, root_slot, slot_of, standard_analyze, standard_synthesize, BasisNode,
    CoeffVector, HaarSystem, WeightedFunction,
};
use crate::linalg::top_eigen_psd;
use crate::weight::WeightGrid;

/// Coefficients at or below this magnitude count as structural zeros.
pub const STRUCTURAL_ZERO: f64 = 1e-14;

/// Relative tolerance of the well-localized check.
pub const WELL_LOCALIZED_TOL: f64 = 1e-12;

/// Tree distance between two basis slots, with the constant block sitting
/// one level above the root.
pub fn slot_distance(d: usize, depth: u32, a: usize, b: usize) -> u32 {
    match (slot_of(d, depth, a).0, slot_of(d, depth, b).0) {
        (BasisNode::Haar(i), BasisNode::Haar(j)) => i.tree_distance(&j),
        (BasisNode::Haar(j), BasisNode::Root) | (BasisNode::Root, BasisNode::Haar(j)) => {
            j.level + 1
        }
        (BasisNode::Root, BasisNode::Root) => 0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandOperator {
    d: usize,
    depth: u32,
    radius: u32,
    /// `(input slot, output slot, ⟨T b_in, b_out⟩)`, sorted, no duplicates.
    entries: Vec<(usize, usize, f64)>,
}

impl BandOperator {
    /// Builds an operator from raw slot coefficients. Duplicates are summed;
    /// entries beyond `radius` must be structural zeros and are dropped.
    pub fn new(
        d: usize,
        depth: u32,
        radius: u32,
        entries: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        TreeConfig::new(depth)?;
        if d == 0 {
            return Err(Error::BadParams("dimension must be positive".into()));
        }
        let n = basis_len(d, depth);
        let mut table = BTreeMap::new();
        for (input, output, value) in entries {
            if input >= n || output >= n {
                return Err(Error::InvalidInput(format!(
                    "slot ({input}, {output}) out of range for dimension {n}"
                )));
            }
            if !value.is_finite() {
                return Err(Error::InvalidInput("non-finite operator coefficient".into()));
            }
            *table.entry((input, output)).or_insert(0.0) += value;
        }
        let mut kept = Vec::with_capacity(table.len());
        for ((input, output), value) in table {
            if slot_distance(d, depth, input, output) > radius {
                if value.abs() > STRUCTURAL_ZERO {
                    return Err(Error::InvalidInput(format!(
                        "coefficient {value:e} between slots {input} and {output} exceeds radius {radius}"
                    )));
                }
                continue;
            }
            if value != 0.0 {
                kept.push((input, output, value));
            }
        }
        Ok(Self {
            d,
            depth,
            radius,
            entries: kept,
        })
    }

    pub fn zero(d: usize, depth: u32) -> Result<Self> {
        Self::new(d, depth, 0, [])
    }

    pub fn identity(d: usize, depth: u32) -> Result<Self> {
        Self::haar_multiplier(d, depth, |_, _| 1.0, 1.0)
    }

    /// `T h_I e_i = σ(I, i) h_I e_i`, `T 𝟏 e_i = root_symbol · 𝟏 e_i`.
    pub fn haar_multiplier(
        d: usize,
        depth: u32,
        symbol: impl Fn(&DyadicInterval, usize) -> f64,
        root_symbol: f64,
    ) -> Result<Self> {
        let tree = TreeConfig::new(depth)?;
        let mut entries = Vec::new();
        for i in tree.internal_intervals() {
            for c in 0..d {
                let k = haar_slot(d, &i, c);
                entries.push((k, k, symbol(&i, c)));
            }
        }
        for c in 0..d {
            let k = root_slot(d, depth, c);
            entries.push((k, k, root_symbol));
        }
        Self::new(d, depth, 0, entries)
    }

    /// `T h_I e_i = left·h_{I₋} e_i + right·h_{I₊} e_i` whenever the halves
    /// still carry Haar functions; zero on the finest Haar level and on constants.
    pub fn dyadic_shift(d: usize, depth: u32, left: f64, right: f64) -> Result<Self> {
        let tree = TreeConfig::new(depth)?;
        let mut entries = Vec::new();
        for i in tree.internal_intervals().filter(|i| i.level + 1 < depth) {
            let (lo, hi) = i.halves();
            for c in 0..d {
                let k = haar_slot(d, &i, c);
                entries.push((k, haar_slot(d, &lo, c), left));
                entries.push((k, haar_slot(d, &hi, c), right));
            }
        }
        Self::new(d, depth, 1, entries)
    }

    /// `T h_{K0} e_i = Σ_K c_K h_K e_i` over every `K` at the level of `K0`,
    /// zero on everything else. The radius is the largest distance that occurs.
    pub fn counterexample(
        d: usize,
        depth: u32,
        k0: DyadicInterval,
        coeff: impl Fn(&DyadicInterval) -> f64,
    ) -> Result<Self> {
        let tree = TreeConfig::new(depth)?;
        tree.check(&k0)?;
        if k0.level >= depth {
            return Err(Error::BadParams(format!("{k0:?} carries no Haar function")));
        }
        let mut entries = Vec::new();
        let mut radius = 0;
        for k in tree.level(k0.level) {
            let c = coeff(&k);
            if c == 0.0 || !c.is_finite() {
                return Err(Error::BadParams(format!(
                    "coefficient on {k:?} must be finite and nonzero"
                )));
            }
            radius = radius.max(k0.tree_distance(&k));
            for comp in 0..d {
                entries.push((haar_slot(d, &k0, comp), haar_slot(d, &k, comp), c));
            }
        }
        Self::new(d, depth, radius, entries)
    }

    /// Gaussian coefficients on a random subset (each pair kept with
    /// probability `density`) of all slot pairs within `radius`.
    pub fn random_band(d: usize, depth: u32, radius: u32, density: f64, seed: u64) -> Result<Self> {
        TreeConfig::new(depth)?;
        if !(density > 0.0 && density <= 1.0) {
            return Err(Error::BadParams(format!("density must be in (0, 1], got {density}")));
        }
        let n = basis_len(d, depth);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = Vec::new();
        for input in 0..n {
            for output in 0..n {
                if slot_distance(d, depth, input, output) > radius {
                    continue;
                }
                let keep = density >= 1.0 || rng.random::<f64>() < density;
                let value: f64 = rng.sample(StandardNormal);
                if keep {
                    entries.push((input, output, value));
                }
            }
        }
        Self::new(d, depth, radius, entries)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn len(&self) -> usize {
        basis_len(self.d, self.depth)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// `⟨T b_input, b_output⟩`.
    pub fn coefficient(&self, input: usize, output: usize) -> f64 {
        self.entries
            .binary_search_by(|&(i, o, _)| (i, o).cmp(&(input, output)))
            .map(|k| self.entries[k].2)
            .unwrap_or(0.0)
    }

    pub fn max_coefficient(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.2.abs()))
    }

    pub fn transpose(&self) -> BandOperator {
        let mut entries: Vec<_> = self.entries.iter().map(|&(i, o, v)| (o, i, v)).collect();
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        Self {
            d: self.d,
            depth: self.depth,
            radius: self.radius,
            entries,
        }
    }

    pub fn scaled(&self, c: f64) -> BandOperator {
        let entries = self
            .entries
            .iter()
            .map(|&(i, o, v)| (i, o, v * c))
            .filter(|e| e.2 != 0.0)
            .collect();
        Self {
            entries,
            ..self.clone()
        }
    }

    /// True iff every coefficient beyond distance `r` is a structural zero.
    pub fn is_band(&self, r: u32) -> bool {
        self.entries.iter().all(|&(i, o, v)| {
            v.abs() <= STRUCTURAL_ZERO || slot_distance(self.d, self.depth, i, o) <= r
        })
    }

    /// Dense coefficient matrix, `[output, input]`.
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for &(i, o, v) in &self.entries {
            m[(o, i)] = v;
        }
        m
    }

    /// Acts on plain coefficient vectors.
    pub fn apply_coeffs(&self, c: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(c.len());
        for &(i, o, v) in &self.entries {
            out[o] += v * c[i];
        }
        out
    }

    pub fn apply_transpose_coeffs(&self, c: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(c.len());
        for &(i, o, v) in &self.entries {
            out[i] += v * c[o];
        }
        out
    }

    fn check_function(&self, f: &WeightedFunction) -> Result<()> {
        if f.d() != self.d || f.depth() != self.depth {
            return Err(Error::ShapeMismatch(format!(
                "function is d={}, depth={} but operator is d={}, depth={}",
                f.d(),
                f.depth(),
                self.d,
                self.depth
            )));
        }
        Ok(())
    }

    fn check_weight(&self, w: &WeightGrid) -> Result<()> {
        if w.d() != self.d || w.depth() != self.depth {
            return Err(Error::ShapeMismatch(format!(
                "weight is d={}, depth={} but operator is d={}, depth={}",
                w.d(),
                w.depth(),
                self.d,
                self.depth
            )));
        }
        Ok(())
    }

    /// `T g` for a function given by leaf values.
    pub fn apply(&self, g: &WeightedFunction) -> Result<WeightedFunction> {
        self.check_function(g)?;
        let c = standard_analyze(g);
        Ok(standard_synthesize(&CoeffVector {
            d: self.d,
            depth: self.depth,
            values: self.apply_coeffs(&c.values),
        }))
    }

    pub fn apply_transpose(&self, g: &WeightedFunction) -> Result<WeightedFunction> {
        self.check_function(g)?;
        let c = standard_analyze(g);
        Ok(standard_synthesize(&CoeffVector {
            d: self.d,
            depth: self.depth,
            values: self.apply_transpose_coeffs(&c.values),
        }))
    }

    /// `T_W f = T(W f)`.
    pub fn weighted_apply(&self, w: &WeightGrid, f: &WeightedFunction) -> Result<WeightedFunction> {
        self.check_weight(w)?;
        self.check_function(f)?;
        self.apply(&f.apply_weight(w)?)
    }

    /// `T_V* g = Tᵀ(V g)`.
    pub fn weighted_adjoint_apply(
        &self,
        v: &WeightGrid,
        g: &WeightedFunction,
    ) -> Result<WeightedFunction> {
        self.check_weight(v)?;
        self.check_function(g)?;
        self.apply_transpose(&g.apply_weight(v)?)
    }

    /// `T_W 𝟏_I e_a` for every node `I` (breadth-first) and component `a`.
    pub fn indicator_responses(&self, w: &WeightGrid) -> Result<Vec<Vec<WeightedFunction>>> {
        self.check_weight(w)?;
        let tree = w.tree();
        Ok((0..tree.node_count())
            .into_par_iter()
            .map(|id| {
                let i = DyadicInterval::from_node_id(id);
                (0..self.d)
                    .map(|a| {
                        let f = WeightedFunction::indicator(self.d, self.depth, &i, &unit(self.d, a));
                        self.weighted_apply(w, &f).expect("shapes checked")
                    })
                    .collect()
            })
            .collect())
    }

    /// `⟨T_W h_J^{W,j}, h_K^{V,k}⟩_{L²(V)}` at `[(K,k), (J,j)]`.
    pub fn matrix_form(&self, w: &WeightGrid, v: &WeightGrid) -> Result<DMatrix<f64>> {
        self.check_weight(w)?;
        self.check_weight(v)?;
        let sys_w = HaarSystem::build(w)?;
        let sys_v = HaarSystem::build(v)?;
        Ok(self.matrix_form_in(&sys_w, &sys_v))
    }

    pub(crate) fn matrix_form_in(&self, sys_w: &HaarSystem, sys_v: &HaarSystem) -> DMatrix<f64> {
        let n = self.len();
        let columns: Vec<DVector<f64>> = (0..n)
            .into_par_iter()
            .map(|k| {
                let y = self
                    .weighted_apply(sys_w.weight(), &sys_w.basis_function(k))
                    .expect("shapes checked");
                sys_v.analyze(&y).expect("shapes checked").values
            })
            .collect();
        DMatrix::from_columns(&columns)
    }

    /// `‖T_W‖_{L²(W)→L²(V)}`.
    pub fn operator_norm(&self, w: &WeightGrid, v: &WeightGrid) -> Result<f64> {
        Ok(matrix_norm(&self.matrix_form(w, v)?))
    }

    /// Exhaustive check of the well-localized conditions for `T_W` and `T_V*`.
    pub fn is_well_localized(&self, w: &WeightGrid, v: &WeightGrid, r: u32) -> Result<WellLocReport> {
        self.check_well_localized(w, v, r, LocalizationMode::Full)
    }

    pub fn check_well_localized(
        &self,
        w: &WeightGrid,
        v: &WeightGrid,
        r: u32,
        mode: LocalizationMode,
    ) -> Result<WellLocReport> {
        self.check_weight(w)?;
        self.check_weight(v)?;
        let sys_w = HaarSystem::build(w)?;
        let sys_v = HaarSystem::build(v)?;
        let transpose = self.transpose();
        let forward = scan_side(self, w, &sys_v, r, mode, Side::Forward);
        let adjoint = scan_side(&transpose, v, &sys_w, r, mode, Side::Adjoint);
        let scale = forward.scale.max(adjoint.scale);
        let (worst_violation, witness) = if adjoint.worst > forward.worst {
            (adjoint.worst, adjoint.witness)
        } else {
            (forward.worst, forward.witness)
        };
        Ok(WellLocReport {
            passed: worst_violation <= WELL_LOCALIZED_TOL * scale,
            worst_violation,
            scale,
            witness,
        })
    }

    pub fn to_file(&self) -> OperatorFile {
        let (d, depth) = (self.d, self.depth);
        let mut file = OperatorFile {
            d,
            depth,
            radius: self.radius,
            entries: Vec::new(),
            root: RootBlock::default(),
        };
        for &(input, output, value) in &self.entries {
            match (slot_of(d, depth, input), slot_of(d, depth, output)) {
                ((BasisNode::Haar(i), a), (BasisNode::Haar(j), b)) => {
                    file.entries.push((i, a, j, b, value))
                }
                ((BasisNode::Root, a), (BasisNode::Haar(j), b)) => {
                    file.root.to_haar.push((a, j, b, value))
                }
                ((BasisNode::Haar(i), a), (BasisNode::Root, b)) => {
                    file.root.from_haar.push((i, a, b, value))
                }
                ((BasisNode::Root, a), (BasisNode::Root, b)) => file.root.corner.push((a, b, value)),
            }
        }
        file
    }

    pub fn from_file(file: &OperatorFile) -> Result<Self> {
        let (d, depth) = (file.d, file.depth);
        let tree = TreeConfig::new(depth)?;
        let check_haar = |i: &DyadicInterval, c: usize| -> Result<()> {
            tree.check(i)?;
            if i.level >= depth || c >= d {
                return Err(Error::InvalidInput(format!("no Haar slot ({i:?}, {c})")));
            }
            Ok(())
        };
        let check_comp = |c: usize| -> Result<()> {
            if c >= d {
                return Err(Error::InvalidInput(format!("component {c} out of range")));
            }
            Ok(())
        };
        let mut entries = Vec::new();
        for &(i, a, j, b, value) in &file.entries {
            check_haar(&i, a)?;
            check_haar(&j, b)?;
            entries.push((haar_slot(d, &i, a), haar_slot(d, &j, b), value));
        }
        for &(a, j, b, value) in &file.root.to_haar {
            check_comp(a)?;
            check_haar(&j, b)?;
            entries.push((root_slot(d, depth, a), haar_slot(d, &j, b), value));
        }
        for &(i, a, b, value) in &file.root.from_haar {
            check_haar(&i, a)?;
            check_comp(b)?;
            entries.push((haar_slot(d, &i, a), root_slot(d, depth, b), value));
        }
        for &(a, b, value) in &file.root.corner {
            check_comp(a)?;
            check_comp(b)?;
            entries.push((root_slot(d, depth, a), root_slot(d, depth, b), value));
        }
        Self::new(d, depth, file.radius, entries)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("operator serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(&serde_json::from_str(text)?)
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Largest singular value of a dense matrix.
pub fn matrix_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = if m.nrows() < m.ncols() {
        m * m.transpose()
    } else {
        m.transpose() * m
    };
    top_eigen_psd(&gram).0.sqrt()
}

pub(crate) fn unit(d: usize, a: usize) -> DVector<f64> {
    let mut e = DVector::zeros(d);
    e[a] = 1.0;
    e
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalizationMode {
    /// All `J` with `|J| ≤ 2|I|`.
    Full,
    /// Only `J` with `|J| ≤ |I|`.
    Relaxed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `T_W` against `h^V`.
    Forward,
    /// `T_V*` against `h^W`.
    Adjoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub i: DyadicInterval,
    pub component: usize,
    pub j: DyadicInterval,
    pub j_component: usize,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellLocReport {
    pub passed: bool,
    pub worst_violation: f64,
    /// Largest `‖T_W 𝟏_I e_a‖` (resp. adjoint) over the tested indicators.
    pub scale: f64,
    pub witness: Option<Witness>,
}

/// True when the pairing of `T 𝟏_I` with `h_J` is required to vanish.
pub fn must_vanish(i: &DyadicInterval, j: &DyadicInterval, r: u32, mode: LocalizationMode) -> bool {
    let admissible = match mode {
        LocalizationMode::Full => j.level + 1 >= i.level,
        LocalizationMode::Relaxed => j.level >= i.level,
    };
    if !admissible {
        return false;
    }
    let outside_ancestor = r < i.level && !i.ancestor(r + 1).expect("r + 1 ≤ level").contains(j);
    let small_and_outside = j.level >= i.level + r && !i.contains(j);
    outside_ancestor || small_and_outside
}

struct SideScan {
    worst: f64,
    scale: f64,
    witness: Option<Witness>,
}

fn scan_side(
    t: &BandOperator,
    w: &WeightGrid,
    target: &HaarSystem,
    r: u32,
    mode: LocalizationMode,
    side: Side,
) -> SideScan {
    let d = t.d;
    let tree = w.tree();
    let per_node: Vec<SideScan> = (0..tree.node_count())
        .into_par_iter()
        .map(|id| {
            let i = DyadicInterval::from_node_id(id);
            let mut scan = SideScan {
                worst: 0.0,
                scale: 0.0,
                witness: None,
            };
            for a in 0..d {
                let f = WeightedFunction::indicator(d, t.depth, &i, &unit(d, a));
                let y = t.weighted_apply(w, &f).expect("shapes checked");
                let norm = y.norm_sq(target.weight()).expect("shapes checked").max(0.0).sqrt();
                scan.scale = scan.scale.max(norm);
                let c = target.analyze(&y).expect("shapes checked");
                for j in tree.internal_intervals() {
                    if !must_vanish(&i, &j, r, mode) {
                        continue;
                    }
                    for b in 0..d {
                        let value = c.values[haar_slot(d, &j, b)].abs();
                        if value > scan.worst {
                            scan.worst = value;
                            scan.witness = Some(Witness {
                                i,
                                component: a,
                                j,
                                j_component: b,
                                side,
                            });
                        }
                    }
                }
            }
            scan
        })
        .collect();
    per_node.into_iter().fold(
        SideScan {
            worst: 0.0,
            scale: 0.0,
            witness: None,
        },
        |mut acc, s| {
            acc.scale = acc.scale.max(s.scale);
            if s.worst > acc.worst {
                acc.worst = s.worst;
                acc.witness = s.witness;
            }
            acc
        },
    )
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RootBlock {
    /// `[i, J, j, ⟨T 𝟏 e_i, h_J e_j⟩]`
    pub to_haar: Vec<(usize, DyadicInterval, usize, f64)>,
    /// `[I, i, j, ⟨T h_I e_i, 𝟏 e_j⟩]`
    pub from_haar: Vec<(DyadicInterval, usize, usize, f64)>,
    /// `[i, j, ⟨T 𝟏 e_i, 𝟏 e_j⟩]`
    pub corner: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorFile {
    pub d: usize,
    pub depth: u32,
    pub radius: u32,
    /// `[I, i, J, j, ⟨T h_I e_i, h_J e_j⟩]`
    pub entries: Vec<(DyadicInterval, usize, DyadicInterval, usize, f64)>,
    #[serde(default)]
    pub root: RootBlock,
}

/// Named operator families for the generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorKind {
    Identity,
    Zero,
    /// Symbols drawn uniformly from `[-amplitude, amplitude]`.
    RandomMultiplier { amplitude: f64 },
    Shift { left: f64, right: f64 },
    Counterexample { k0: DyadicInterval },
    RandomBand { radius: u32, density: f64 },
}

pub fn generate_operator(kind: &OperatorKind, d: usize, depth: u32, seed: u64) -> Result<BandOperator> {
    match kind {
        OperatorKind::Identity => BandOperator::identity(d, depth),
        OperatorKind::Zero => BandOperator::zero(d, depth),
        OperatorKind::RandomMultiplier { amplitude } => {
            let tree = TreeConfig::new(depth)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut symbols = BTreeMap::new();
            for i in tree.internal_intervals() {
                for c in 0..d {
                    symbols.insert((i, c), rng.random_range(-*amplitude..=*amplitude));
                }
            }
            let root = rng.random_range(-*amplitude..=*amplitude);
            BandOperator::haar_multiplier(d, depth, |i, c| symbols[&(*i, c)], root)
        }
        OperatorKind::Shift { left, right } => BandOperator::dyadic_shift(d, depth, *left, *right),
        OperatorKind::Counterexample { k0 } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let coeffs: Vec<f64> = (0..1u64 << k0.level)
                .map(|_| {
                    let x: f64 = rng.random_range(0.5..=1.5);
                    if rng.random::<bool>() {
                        x
                    } else {
                        -x
                    }
                })
                .collect();
            BandOperator::counterexample(d, depth, *k0, |k| coeffs[k.index as usize])
        }
        OperatorKind::RandomBand { radius, density } => {
            BandOperator::random_band(d, depth, *radius, *density, seed)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weight::{generate_weight, WeightKind};

    fn iv(level: u32, index: u64) -> DyadicInterval {
        DyadicInterval { level, index }
    }

    fn random_weight(d: usize, depth: u32, seed: u64) -> WeightGrid {
        generate_weight(
            &WeightKind::RandomA2 {
                eccentricity: 5.0,
                angle_scale: 1.0,
            },
            d,
            depth,
            seed,
        )
        .unwrap()
    }

    fn random_function(d: usize, depth: u32, seed: u64) -> WeightedFunction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        WeightedFunction::from_flat(
            d,
            depth,
            DVector::from_fn(d << depth, |_, _| rng.sample(StandardNormal)),
        )
        .unwrap()
    }

    /// One-sided Jacobi SVD, largest singular value.
    fn svd_oracle(m: &DMatrix<f64>) -> f64 {
        let mut u = m.clone();
        let n = u.ncols();
        for _ in 0..60 {
            let mut rotated = false;
            for p in 0..n {
                for q in (p + 1)..n {
                    let alpha = u.column(p).norm_squared();
                    let beta = u.column(q).norm_squared();
                    let gamma = u.column(p).dot(&u.column(q));
                    if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for k in 0..u.nrows() {
                        let (x, y) = (u[(k, p)], u[(k, q)]);
                        u[(k, p)] = c * x - s * y;
                        u[(k, q)] = s * x + c * y;
                    }
                }
            }
            if !rotated {
                break;
            }
        }
        (0..n).map(|k| u.column(k).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn multiplier_examples() {
        let id = BandOperator::identity(2, 3).unwrap();
        let f = random_function(2, 3, 1);
        let out = id.weighted_apply(&WeightGrid::identity(2, 3).unwrap(), &f).unwrap();
        assert!((out.values() - f.values()).amax() < 1e-12);
        assert_eq!(id.dense(), DMatrix::identity(16, 16));

        let zero = BandOperator::haar_multiplier(2, 3, |_, _| 0.0, 0.0).unwrap();
        assert!(zero.entries().is_empty());

        let sign = BandOperator::haar_multiplier(1, 3, |i, _| if i.index % 2 == 0 { 1.0 } else { -1.0 }, -1.0)
            .unwrap();
        let w = WeightGrid::identity(1, 3).unwrap();
        let m = sign.matrix_form(&w, &w).unwrap();
        assert!((&m * &m - DMatrix::identity(8, 8)).amax() < 1e-12);
        assert!(sign.is_band(0));
    }

    #[test]
    fn shift_examples() {
        let s = BandOperator::dyadic_shift(1, 3, 1.0, -1.0).unwrap();
        assert!(s.is_band(1));
        assert!(!s.is_band(0));
        assert!(BandOperator::dyadic_shift(2, 3, 0.0, 0.0).unwrap().entries().is_empty());
        let w = WeightGrid::identity(2, 3).unwrap();
        let s = BandOperator::dyadic_shift(2, 3, 0.6, 1.7).unwrap();
        let m = s.matrix_form(&w, &w).unwrap();
        let expected = (0.6f64.powi(2) + 1.7f64.powi(2)).sqrt();
        assert!((svd_oracle(&m) - expected).abs() < 1e-12);
        assert!((s.operator_norm(&w, &w).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn counterexample_examples() {
        let t = BandOperator::counterexample(1, 3, iv(2, 0), |_| 1.0).unwrap();
        let k0 = haar_slot(1, &iv(2, 0), 0);
        for k in 0..4 {
            assert_eq!(t.coefficient(k0, haar_slot(1, &iv(2, k), 0)), 1.0);
        }
        assert_eq!(t.entries().len(), 4);
        assert_eq!(t.radius(), 4);
        assert!(!t.is_band(3));
        assert!(t.is_band(4));
        assert!(matches!(
            BandOperator::counterexample(1, 3, iv(2, 0), |k| k.index as f64),
            Err(Error::BadParams(_))
        ));

        let w = WeightGrid::identity(1, 3).unwrap();
        let relaxed = t.check_well_localized(&w, &w, 0, LocalizationMode::Relaxed).unwrap();
        assert!(relaxed.passed, "{relaxed:?}");
        assert_eq!(relaxed.worst_violation, 0.0);
        let full = t.is_well_localized(&w, &w, 0).unwrap();
        assert!(!full.passed);
        let witness = full.witness.unwrap();
        assert_eq!(witness.j.level, 2);
        assert_eq!(witness.i.level, 3);
        assert!(iv(2, 0).contains(&witness.i) || witness.j == iv(2, 0));
    }

    #[test]
    fn weighted_apply_examples() {
        let w = random_weight(2, 3, 4);
        let f = random_function(2, 3, 5);
        let id = BandOperator::identity(2, 3).unwrap();
        let out = id.weighted_apply(&w, &f).unwrap();
        assert!((out.values() - f.apply_weight(&w).unwrap().values()).amax() < 1e-12);
        let zero = BandOperator::zero(2, 3).unwrap();
        assert_eq!(zero.weighted_apply(&w, &f).unwrap(), WeightedFunction::zeros(2, 3));
        assert_eq!(
            zero.weighted_adjoint_apply(&w, &f).unwrap(),
            WeightedFunction::zeros(2, 3)
        );
        assert!(matches!(
            id.weighted_apply(&random_weight(2, 4, 1), &f),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn adjoint_duality() {
        for seed in 0..10 {
            let d = 1 + (seed as usize % 3);
            let w = random_weight(d, 4, seed);
            let v = random_weight(d, 4, seed + 100);
            let t = BandOperator::random_band(d, 4, (seed % 3) as u32, 0.7, seed).unwrap();
            let f = random_function(d, 4, seed + 200);
            let g = random_function(d, 4, seed + 300);
            let lhs = t.weighted_apply(&w, &f).unwrap().inner(&v, &g).unwrap();
            let rhs = f.inner(&w, &t.weighted_adjoint_apply(&v, &g).unwrap()).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1.0));
        }
    }

    #[test]
    fn symmetric_table_adjoint_matches_forward() {
        let t = BandOperator::random_band(2, 3, 1, 1.0, 9).unwrap();
        let sym = BandOperator::new(
            2,
            3,
            1,
            t.entries()
                .iter()
                .chain(t.transpose().entries())
                .map(|&(i, o, v)| (i, o, 0.5 * v)),
        )
        .unwrap();
        let id = WeightGrid::identity(2, 3).unwrap();
        let g = random_function(2, 3, 3);
        let a = sym.weighted_adjoint_apply(&id, &g).unwrap();
        let b = sym.weighted_apply(&id, &g).unwrap();
        assert!((a.values() - b.values()).amax() < 1e-12);
    }

    #[test]
    fn band_operators_are_well_localized() {
        for seed in 0..6 {
            for r in 0..3 {
                let d = 1 + (seed as usize % 2);
                let w = random_weight(d, 4, seed);
                let v = random_weight(d, 4, seed + 7);
                let t = BandOperator::random_band(d, 4, r, 1.0, seed).unwrap();
                let report = t.is_well_localized(&w, &v, r).unwrap();
                assert!(report.passed, "r={r} seed={seed}: {report:?}");
                assert!(report.scale > 0.0);
            }
        }
        let w = random_weight(2, 3, 0);
        let zero = BandOperator::zero(2, 3).unwrap();
        assert!(zero.is_well_localized(&w, &w, 0).unwrap().passed);
    }

    #[test]
    fn must_vanish_cases() {
        // sibling of the parent is outside I^{(1)}
        assert!(must_vanish(&iv(3, 0), &iv(2, 1), 0, LocalizationMode::Full));
        assert!(!must_vanish(&iv(3, 0), &iv(2, 1), 0, LocalizationMode::Relaxed));
        assert!(!must_vanish(&iv(3, 0), &iv(2, 0), 0, LocalizationMode::Full));
        // too large to be admissible
        assert!(!must_vanish(&iv(3, 0), &iv(1, 1), 0, LocalizationMode::Full));
        // |J| ≤ 2^{-r}|I| and J ⊄ I
        assert!(must_vanish(&iv(2, 0), &iv(3, 2), 0, LocalizationMode::Full));
        assert!(must_vanish(&iv(2, 0), &iv(3, 2), 1, LocalizationMode::Full));
        assert!(!must_vanish(&iv(2, 0), &iv(3, 2), 2, LocalizationMode::Full));
        assert!(must_vanish(&iv(3, 0), &iv(4, 4), 1, LocalizationMode::Full));
        // ancestors beyond the root contain everything
        assert!(!must_vanish(&iv(1, 0), &iv(1, 1), 1, LocalizationMode::Full));
    }

    #[test]
    fn matrix_form_examples() {
        let w = random_weight(2, 3, 11);
        let v = random_weight(2, 3, 12);
        let id = BandOperator::identity(2, 3).unwrap();
        let idw = WeightGrid::identity(2, 3).unwrap();
        let m = id.matrix_form(&idw, &idw).unwrap();
        assert!((m - DMatrix::identity(16, 16)).amax() < 1e-10);
        // T_W = M_W here, so the entries are ∫ (h_K^V)ᵀ V W h_J^W
        let bw = HaarSystem::build(&w).unwrap().basis_matrix();
        let bv = HaarSystem::build(&v).unwrap().basis_matrix();
        let mut dwv = DMatrix::zeros(16, 16);
        for leaf in 0..8 {
            let block = v.leaf(leaf) * w.leaf(leaf) / 8.0;
            dwv.view_mut((2 * leaf, 2 * leaf), (2, 2)).copy_from(&block);
        }
        let oracle = bv.transpose() * dwv * bw;
        assert!((id.matrix_form(&w, &v).unwrap() - oracle).amax() < 1e-10);
        let zero = BandOperator::zero(2, 3).unwrap();
        assert_eq!(zero.matrix_form(&w, &v).unwrap(), DMatrix::zeros(16, 16));
        let mult = BandOperator::haar_multiplier(2, 3, |i, c| (i.node_id() + c) as f64 - 3.0, 2.5).unwrap();
        let m = mult.matrix_form(&idw, &idw).unwrap();
        assert!((&m - mult.dense()).amax() < 1e-12);
        assert!((mult.operator_norm(&idw, &idw).unwrap() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn matrix_form_is_consistent_with_apply() {
        let w = random_weight(3, 3, 13);
        let v = random_weight(3, 3, 14);
        let t = BandOperator::random_band(3, 3, 2, 0.8, 5).unwrap();
        let sys_w = HaarSystem::build(&w).unwrap();
        let sys_v = HaarSystem::build(&v).unwrap();
        let m = t.matrix_form(&w, &v).unwrap();
        let f = random_function(3, 3, 15);
        let lhs = &m * sys_w.analyze(&f).unwrap().values;
        let rhs = sys_v.analyze(&t.weighted_apply(&w, &f).unwrap()).unwrap().values;
        assert!((lhs - rhs).norm() <= 1e-9 * f.norm_sq(&w).unwrap().sqrt());
    }

    #[test]
    fn norm_matches_svd_oracle_and_adjoint() {
        for seed in 0..4 {
            let d = 1 + seed as usize % 3;
            let w = random_weight(d, 3, seed);
            let v = random_weight(d, 3, seed + 50);
            let t = BandOperator::random_band(d, 3, 1, 0.6, seed).unwrap();
            let m = t.matrix_form(&w, &v).unwrap();
            let norm = t.operator_norm(&w, &v).unwrap();
            assert!((norm - svd_oracle(&m)).abs() <= 1e-8 * norm);
            let dual = t.transpose().operator_norm(&v, &w).unwrap();
            assert!((norm - dual).abs() <= 1e-9 * norm);
            let scaled = t.scaled(-2.5).operator_norm(&w, &v).unwrap();
            assert!((scaled - 2.5 * norm).abs() <= 1e-10 * scaled);
        }
    }

    #[test]
    fn json_round_trip() {
        let t = BandOperator::random_band(2, 3, 2, 1.0, 21).unwrap();
        let back = BandOperator::from_json(&t.to_json()).unwrap();
        assert_eq!(back, t);
        let file = t.to_file();
        assert!(!file.root.corner.is_empty());
        assert!(BandOperator::from_json(r#"{"d":1,"depth":2,"radius":0,"entries":[[[0,0],0,[1,1],0,1.0]]}"#).is_err());
        let ok = BandOperator::from_json(r#"{"d":1,"depth":2,"radius":1,"entries":[[[0,0],0,[1,1],0,1.0]]}"#).unwrap();
        assert_eq!(ok.coefficient(0, 2), 1.0);
    }

    #[test]
    fn radius_invariant_is_enforced() {
        assert!(BandOperator::new(1, 3, 0, [(0, 1, 1.0)]).is_err());
        let dropped = BandOperator::new(1, 3, 0, [(0, 1, 1e-16)]).unwrap();
        assert!(dropped.entries().is_empty());
        assert_eq!(slot_distance(1, 3, root_slot(1, 3, 0), 0), 1);
        assert_eq!(slot_distance(1, 3, root_slot(1, 3, 0), root_slot(1, 3, 0)), 0);
    }
}
