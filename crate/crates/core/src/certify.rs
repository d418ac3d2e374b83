//! Testing constants for `T_W = T M_W : L²(W) → L²(V)`, the paraproducts
//! built from weighted expectations, and the certification report that puts
//! them next to the measured operator norm.
//!
//! The dual quantities come from the same code applied to `(Tᵀ, V, W)`,
//! since `T_V* = Tᵀ M_V`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::band::{matrix_norm, unit, BandOperator};
use crate::dyadic::DyadicInterval;
use crate::error::{Error, Result};
use crate::haar::{
    expectation_vector, haar_slot, slot_of, BasisNode, CoeffVector, HaarSystem, WeightedFunction,
};
use crate::linalg::{lambda_max, spectral_norm, sym_inv_sqrt};
use crate::weight::{Characteristics, WeightGrid};

/// Relative slack in `a ≤ ‖T_W‖`.
pub const NECESSITY_REL_TOL: f64 = 1e-9;
/// Absolute slack in `a_local ≤ a`.
pub const LOCAL_ABS_TOL: f64 = 1e-10;
/// Paraproduct entries that must vanish, relative to `max(1, max |matrix entry|)`.
pub const PARAPRODUCT_VANISH_TOL: f64 = 1e-10;
/// Paraproduct entries that must agree with `T_W`, same scale.
pub const PARAPRODUCT_AGREE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TestingConstants {
    pub a1: f64,
    pub a2: f64,
    pub a1_local: f64,
    pub a2_local: f64,
    pub a3: f64,
}

/// Everything the forward-side constants need: both Haar systems and the
/// responses `T_W 𝟏_I e_a` with their `H_V` coefficients.
pub struct Workspace<'a> {
    t: &'a BandOperator,
    w: &'a WeightGrid,
    v: &'a WeightGrid,
    sys_w: HaarSystem,
    sys_v: HaarSystem,
    responses: Vec<Vec<WeightedFunction>>,
    coeffs: Vec<Vec<CoeffVector>>,
}

impl<'a> Workspace<'a> {
    pub fn new(t: &'a BandOperator, w: &'a WeightGrid, v: &'a WeightGrid) -> Result<Self> {
        if !w.same_shape(v) || w.d() != t.d() || w.depth() != t.depth() {
            return Err(Error::ShapeMismatch(format!(
                "operator d={}, depth={}; W d={}, depth={}; V d={}, depth={}",
                t.d(),
                t.depth(),
                w.d(),
                w.depth(),
                v.d(),
                v.depth()
            )));
        }
        let sys_w = HaarSystem::build(w)?;
        let sys_v = HaarSystem::build(v)?;
        let responses = t.indicator_responses(w)?;
        let coeffs = responses
            .par_iter()
            .map(|per| {
                per.iter()
                    .map(|y| sys_v.analyze(y).expect("shapes checked"))
                    .collect()
            })
            .collect();
        Ok(Self {
            t,
            w,
            v,
            sys_w,
            sys_v,
            responses,
            coeffs,
        })
    }

    pub fn operator(&self) -> &BandOperator {
        self.t
    }

    pub fn system_w(&self) -> &HaarSystem {
        &self.sys_w
    }

    pub fn system_v(&self) -> &HaarSystem {
        &self.sys_v
    }

    /// `T_W 𝟏_I e_a`.
    pub fn response(&self, i: &DyadicInterval, a: usize) -> &WeightedFunction {
        &self.responses[i.node_id()][a]
    }

    fn gram_constant(&self, local: bool) -> f64 {
        let d = self.t.d();
        let worst = (0..self.responses.len())
            .into_par_iter()
            .map(|id| {
                let i = DyadicInterval::from_node_id(id);
                let ys: Vec<WeightedFunction> = if local {
                    self.responses[id].iter().map(|y| y.restricted(&i)).collect()
                } else {
                    self.responses[id].clone()
                };
                let mut q = DMatrix::zeros(d, d);
                for a in 0..d {
                    for b in a..d {
                        let x = ys[a].inner(self.v, &ys[b]).expect("shapes checked");
                        q[(a, b)] = x;
                        q[(b, a)] = x;
                    }
                }
                let s = sym_inv_sqrt(self.w.integral_at(id));
                lambda_max(&(&s * q * &s)).max(0.0)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold(0.0, f64::max);
        worst.sqrt()
    }

    /// Smallest `A₁` with `‖T_W 𝟏_I e‖_{L²(V)} ≤ A₁ ⟨W(I)e, e⟩^{1/2}` for all `I`, `e`.
    pub fn testing_a1(&self) -> f64 {
        self.gram_constant(false)
    }

    /// The same with `𝟏_I T_W 𝟏_I`.
    pub fn testing_a1_local(&self) -> f64 {
        self.gram_constant(true)
    }

    /// Smallest `A₃` with `|⟨T_W 𝟏_I e, 𝟏_J ν⟩_{L²(V)}| ≤ A₃ ⟨W(I)e,e⟩^{1/2}⟨V(J)ν,ν⟩^{1/2}`
    /// over pairs whose levels differ by at most `r`.
    pub fn testing_a3(&self, r: u32) -> f64 {
        let d = self.t.d();
        let tree = self.w.tree();
        let v_inv_sqrt: Vec<DMatrix<f64>> = (0..tree.node_count())
            .map(|id| sym_inv_sqrt(self.v.integral_at(id)))
            .collect();
        (0..tree.node_count())
            .into_par_iter()
            .map(|id| {
                let i = DyadicInterval::from_node_id(id);
                let vy: Vec<Vec<DVector<f64>>> = self.responses[id]
                    .iter()
                    .map(|y| y.weighted_integrals(self.v).expect("shapes checked"))
                    .collect();
                let wi = sym_inv_sqrt(self.w.integral_at(id));
                let lo = i.level.saturating_sub(r);
                let hi = (i.level + r).min(tree.depth);
                let mut worst = 0.0f64;
                for level in lo..=hi {
                    for j in tree.level(level) {
                        let jd = j.node_id();
                        let m = DMatrix::from_fn(d, d, |a, b| vy[a][jd][b]);
                        worst = worst.max(spectral_norm(&(&wi * m * &v_inv_sqrt[jd])));
                    }
                }
                worst
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold(0.0, f64::max)
    }

    /// Coordinates of `T_W` from `H_W` to `H_V`.
    pub fn matrix_form(&self) -> DMatrix<f64> {
        self.t.matrix_form_in(&self.sys_w, &self.sys_v)
    }

    /// Matrix of `Π^W f = Σ_{J: level ≥ r} ⟨T_W E^W_{J^{(r)}} f, h_J^{V,j}⟩ h_J^{V,j}`
    /// in the bases `H_W → H_V`.
    pub fn paraproduct(&self, r: u32) -> Result<DMatrix<f64>> {
        let (d, depth) = (self.t.d(), self.t.depth());
        if depth <= r {
            return Err(Error::BadParams(format!(
                "paraproduct of radius {r} needs depth > {r}, got {depth}"
            )));
        }
        let n = self.sys_w.len();
        let tree = self.w.tree();
        let rows: Vec<DyadicInterval> = tree.internal_intervals().filter(|j| j.level >= r).collect();
        let columns: Vec<DVector<f64>> = (0..n)
            .into_par_iter()
            .map(|k| {
                let f = self.sys_w.basis_function(k);
                let wf = f.weighted_integrals(self.w).expect("shapes checked");
                let mut col = DVector::zeros(n);
                for j in &rows {
                    let top = j.ancestor(r).expect("level ≥ r");
                    let x = expectation_vector(self.w, &wf, &top);
                    for c in 0..d {
                        let slot = haar_slot(d, j, c);
                        col[slot] = (0..d)
                            .map(|a| x[a] * self.coeffs[top.node_id()][a].values[slot])
                            .sum();
                    }
                }
                col
            })
            .collect();
        Ok(DMatrix::from_columns(&columns))
    }
}

/// Result of comparing `Π^W` with `T_W` block by block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParaproductCheck {
    pub radius: u32,
    /// Largest `|⟨Π h_I, h_J⟩|` with `|J| ≥ 2^{-r}|I|`.
    pub vanishing_max: f64,
    /// Largest `|⟨Π h_I, h_J⟩ − ⟨T_W h_I, h_J⟩|` with `|J| < 2^{-r}|I|`.
    pub agreement_max: f64,
    /// Largest `|⟨T_W h_I, h_J⟩|` with `|J| < 2^{-r}|I|` and `J ⊄ I`.
    pub outside_max: f64,
    pub scale: f64,
    pub passed: bool,
}

/// Compares a paraproduct with the matrix form of the operator. Constants
/// are treated as living on a parent of the root, so every `J` is finer
/// than them by at least one level.
pub fn check_paraproduct(
    pi: &DMatrix<f64>,
    m: &DMatrix<f64>,
    d: usize,
    depth: u32,
    r: u32,
) -> ParaproductCheck {
    let n = m.ncols();
    let scale = m.amax().max(1.0);
    let mut check = ParaproductCheck {
        radius: r,
        vanishing_max: 0.0,
        agreement_max: 0.0,
        outside_max: 0.0,
        scale,
        passed: true,
    };
    for col in 0..n {
        let (node, _) = slot_of(d, depth, col);
        for row in 0..n {
            let j = match slot_of(d, depth, row).0 {
                BasisNode::Haar(j) => j,
                BasisNode::Root => {
                    check.vanishing_max = check.vanishing_max.max(pi[(row, col)].abs());
                    continue;
                }
            };
            let (finer, inside) = match node {
                BasisNode::Haar(i) => (j.level > i.level + r, i.contains(&j)),
                BasisNode::Root => (j.level + 1 > r, true),
            };
            if !finer {
                check.vanishing_max = check.vanishing_max.max(pi[(row, col)].abs());
                continue;
            }
            check.agreement_max = check.agreement_max.max((pi[(row, col)] - m[(row, col)]).abs());
            if !inside {
                check.outside_max = check
                    .outside_max
                    .max(pi[(row, col)].abs())
                    .max(m[(row, col)].abs());
            }
        }
    }
    check.passed = check.vanishing_max <= PARAPRODUCT_VANISH_TOL * scale
        && check.agreement_max <= PARAPRODUCT_AGREE_TOL * scale
        && check.outside_max <= PARAPRODUCT_AGREE_TOL * scale;
    check
}

pub fn testing_a1(t: &BandOperator, w: &WeightGrid, v: &WeightGrid) -> Result<f64> {
    Ok(Workspace::new(t, w, v)?.testing_a1())
}

pub fn testing_a2_dual(t: &BandOperator, w: &WeightGrid, v: &WeightGrid) -> Result<f64> {
    testing_a1(&t.transpose(), v, w)
}

/// `(A₁ local, A₂ local)`.
pub fn testing_local(t: &BandOperator, w: &WeightGrid, v: &WeightGrid) -> Result<(f64, f64)> {
    let forward = Workspace::new(t, w, v)?.testing_a1_local();
    let tt = t.transpose();
    let dual = Workspace::new(&tt, v, w)?.testing_a1_local();
    Ok((forward, dual))
}

pub fn testing_a3(t: &BandOperator, w: &WeightGrid, v: &WeightGrid, r: u32) -> Result<f64> {
    Ok(Workspace::new(t, w, v)?.testing_a3(r))
}

/// `Π^W`; the dual `Π^V` is `build_paraproduct(Tᵀ, V, W, r)`.
pub fn build_paraproduct(
    t: &BandOperator,
    w: &WeightGrid,
    v: &WeightGrid,
    r: u32,
) -> Result<DMatrix<f64>> {
    Workspace::new(t, w, v)?.paraproduct(r)
}

/// `|I|^{1/2}‖⟨W⟩_I^{-1/2}⟨Wf⟩_I‖` against `‖f 𝟏_I‖_{L²(W)}` for every `I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectationBound {
    /// Largest ratio of the two sides (0 where both vanish).
    pub max_ratio: f64,
    /// Largest `lhs − √d·rhs`.
    pub max_excess: f64,
}

pub fn expectation_bound(w: &WeightGrid, f: &WeightedFunction) -> Result<ExpectationBound> {
    let wf = f.weighted_integrals(w)?;
    let root_d = (w.d() as f64).sqrt();
    let mut out = ExpectationBound {
        max_ratio: 0.0,
        max_excess: f64::NEG_INFINITY,
    };
    for i in w.tree().intervals() {
        let size = i.measure();
        let avg_w = w.integral_at(i.node_id()) / size;
        let avg_wf = &wf[i.node_id()] / size;
        let lhs = size.sqrt() * (sym_inv_sqrt(&avg_w) * avg_wf).norm();
        let rhs = f.restricted(&i).norm_sq(w)?.max(0.0).sqrt();
        if rhs > 0.0 {
            out.max_ratio = out.max_ratio.max(lhs / rhs);
        }
        out.max_excess = out.max_excess.max(lhs - root_d * rhs);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    pub radius: u32,
    pub c_cfg: f64,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaproductReport {
    pub norm_w: f64,
    pub norm_v: f64,
    /// `‖Π^W‖ / (A₁ local · B(W))`.
    pub ratio_w: f64,
    /// `‖Π^V‖ / (A₂ local · B(V))`.
    pub ratio_v: f64,
    pub check_w: ParaproductCheck,
    pub check_v: ParaproductCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub d: usize,
    pub depth: u32,
    pub radius: u32,
    pub c_cfg: f64,
    pub samples: usize,
    pub seed: u64,
    pub tolerances: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub constants: TestingConstants,
    pub char_w: Characteristics,
    pub char_v: Characteristics,
    pub measured_norm: f64,
    pub c_cfg: f64,
    pub bound_thm1: f64,
    pub bound_thm2: f64,
    /// `‖T_W‖ / (2^{2r}(A₁B(W) + A₂B(V)))`.
    pub sufficiency_ratio: f64,
    /// `‖T_W‖ / (2^{2r}(A₁ local·B(W) + A₂ local·B(V) + A₃))`.
    pub sufficiency_ratio_local: f64,
    /// `max |⟨T_W h_I^{W,i}, h_J^{V,j}⟩|`.
    pub haar_pairing_max: f64,
    pub haar_pairing_ratio: f64,
    pub necessity_ok: bool,
    pub is_band: bool,
    pub paraproduct: Option<ParaproductReport>,
    pub warnings: Vec<String>,
    pub failures: Vec<String>,
    pub provenance: Provenance,
}

impl CertificationReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// `a / b`, with `0/0 = 0`.
pub fn ratio(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// Seed used for the characteristics of `V` when `W` uses `seed`.
pub fn dual_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

pub fn certify(
    t: &BandOperator,
    w: &WeightGrid,
    v: &WeightGrid,
    opts: &CertifyOptions,
) -> Result<CertificationReport> {
    let r = opts.radius;
    let forward = Workspace::new(t, w, v)?;
    let tt = t.transpose();
    let dual = Workspace::new(&tt, v, w)?;

    let constants = TestingConstants {
        a1: forward.testing_a1(),
        a2: dual.testing_a1(),
        a1_local: forward.testing_a1_local(),
        a2_local: dual.testing_a1_local(),
        a3: forward.testing_a3(r),
    };
    let char_w = w.characteristics(opts.samples, opts.seed)?;
    let char_v = v.characteristics(opts.samples, dual_seed(opts.seed))?;
    let m = forward.matrix_form();
    let measured_norm = matrix_norm(&m);

    let growth = 4f64.powi(r as i32);
    let thm1 = growth * (constants.a1 * char_w.b_w + constants.a2 * char_v.b_w);
    let thm2 = growth
        * (constants.a1_local * char_w.b_w + constants.a2_local * char_v.b_w + constants.a3);
    let haar_pairing_max = m.amax();

    let mut warnings = Vec::new();
    let mut failures = Vec::new();
    let is_band = t.is_band(r);
    if !is_band {
        warnings.push(format!("operator is not a band operator of radius {r}"));
    }

    let limit = measured_norm * (1.0 + NECESSITY_REL_TOL);
    let necessity = [
        ("a1", constants.a1 <= limit),
        ("a2", constants.a2 <= limit),
        ("a3", constants.a3 <= limit),
        ("a1_local", constants.a1_local <= constants.a1 + LOCAL_ABS_TOL),
        ("a2_local", constants.a2_local <= constants.a2 + LOCAL_ABS_TOL),
    ];
    let necessity_ok = necessity.iter().all(|(_, ok)| *ok);
    for (name, ok) in necessity {
        if !ok {
            failures.push(format!("necessity: {name} exceeds its bound"));
        }
    }

    let paraproduct = if t.depth() > r {
        let pi_w = forward.paraproduct(r)?;
        let pi_v = dual.paraproduct(r)?;
        let check_w = check_paraproduct(&pi_w, &m, t.d(), t.depth(), r);
        let check_v = check_paraproduct(&pi_v, &m.transpose(), t.d(), t.depth(), r);
        if !check_w.passed {
            failures.push("paraproduct: Π^W does not match T_W".into());
        }
        if !check_v.passed {
            failures.push("paraproduct: Π^V does not match T_V*".into());
        }
        let norm_w = matrix_norm(&pi_w);
        let norm_v = matrix_norm(&pi_v);
        Some(ParaproductReport {
            norm_w,
            norm_v,
            ratio_w: ratio(norm_w, constants.a1_local * char_w.b_w),
            ratio_v: ratio(norm_v, constants.a2_local * char_v.b_w),
            check_w,
            check_v,
        })
    } else {
        warnings.push(format!("depth {} too shallow for paraproducts of radius {r}", t.depth()));
        None
    };

    let tolerances = BTreeMap::from([
        ("local_abs".to_string(), LOCAL_ABS_TOL),
        ("necessity_rel".to_string(), NECESSITY_REL_TOL),
        ("paraproduct_agree".to_string(), PARAPRODUCT_AGREE_TOL),
        ("paraproduct_vanish".to_string(), PARAPRODUCT_VANISH_TOL),
    ]);

    Ok(CertificationReport {
        constants,
        char_w,
        char_v,
        measured_norm,
        c_cfg: opts.c_cfg,
        bound_thm1: opts.c_cfg * thm1,
        bound_thm2: opts.c_cfg * thm2,
        sufficiency_ratio: ratio(measured_norm, thm1),
        sufficiency_ratio_local: ratio(measured_norm, thm2),
        haar_pairing_max,
        haar_pairing_ratio: ratio(haar_pairing_max, constants.a1),
        necessity_ok,
        is_band,
        paraproduct,
        warnings,
        failures,
        provenance: Provenance {
            d: t.d(),
            depth: t.depth(),
            radius: r,
            c_cfg: opts.c_cfg,
            samples: opts.samples,
            seed: opts.seed,
            tolerances,
        },
    })
}

/// `T_W 𝟏_I e` for a single indicator, used by the oracles in tests.
pub fn indicator_response(
    t: &BandOperator,
    w: &WeightGrid,
    i: &DyadicInterval,
    a: usize,
) -> Result<WeightedFunction> {
    t.weighted_apply(w, &WeightedFunction::indicator(t.d(), t.depth(), i, &unit(t.d(), a)))
}
