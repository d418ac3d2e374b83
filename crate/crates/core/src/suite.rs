//! Seeded instance suites and the sweep runner.
//!
//! Each [`Preset`] turns one seed into a handful of cases, evaluates them and
//! records named metrics plus a pass flag. Sweeps fan out over seeds on a
//! dedicated thread pool and merge results in seed order, so reports do not
//! depend on the worker count.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::band::{matrix_norm, BandOperator, LocalizationMode, OperatorKind};
use crate::carleson::{
    carleson_from_operator, cet1_testing_constant, cet2_testing_constant, embedding_form,
    embedding_sharp_constant, search_lambda, CarlesonInstance,
};
use crate::certify::{certify, check_paraproduct, expectation_bound, CertifyOptions, Workspace};
use crate::dyadic::DyadicInterval;
use crate::error::{Error, Result};
use crate::haar::{standard_synthesize, CoeffVector, HaarSystem, WeightedFunction};
use crate::linalg::{sym_inv_sqrt, sym_sqrt};
use crate::weight::{generate_weight, WeightGrid, WeightKind};

/// Acceptance thresholds.
pub mod tolerance {
    pub const GRAM: f64 = 1e-9;
    pub const ROUND_TRIP: f64 = 1e-8;
    pub const PARSEVAL: f64 = 1e-8;
    pub const HAAR_BOUND: f64 = 1e-9;
    pub const IDENTITY: f64 = 1e-12;
    pub const EXPECTATION: f64 = 1e-9;
    pub const CET_CHAIN: f64 = 1e-9;
    pub const HOMOGENEITY: f64 = 1e-10;
    pub const ORACLE: f64 = 1e-8;
}

/// Constants measured on the frozen seed suite (seeds `0..=49`).
pub mod frozen {
    /// Regression stand-in for the unspecified dimensional constant: the
    /// largest sufficiency, pairing, embedding and paraproduct ratio seen for
    /// `d ≤ 3`, rounded up; `16·d` beyond the measured range.
    pub fn k_reg(d: usize) -> f64 {
        match d {
            1 => 1.4,
            2 | 3 => 1.3,
            _ => 16.0 * d as f64,
        }
    }

    /// Largest `‖T_W‖ / (2^{2r}(A₁B(W) + A₂B(V)))` seen per dimension.
    pub const SUFFICIENCY_MAX: [f64; 3] = [0.643, 0.520, 0.472];
    /// Largest `‖Π^W‖ / (A₁ local · B(W))` per dimension.
    pub const PARAPRODUCT_MAX: [f64; 3] = [0.557, 0.470, 0.473];
    /// Largest `C_sharp / (C₂ r₂ [W]_{A₂})` per dimension.
    pub const EMBEDDING_MAX: [f64; 3] = [1.15, 1.22, 1.29];
    /// Largest `max|⟨T_W h_I, h_J⟩| / A₁` per dimension.
    pub const PAIRING_MAX: [f64; 3] = [1.40, 1.30, 1.17];
    /// Largest passing multiplier `λ* / (d [W]_{A₂})` per dimension.
    pub const LAMBDA_MAX: [f64; 3] = [4.0, 4.0, 4.0];

    pub fn lookup(table: &[f64; 3], d: usize) -> f64 {
        table.get(d.wrapping_sub(1)).copied().unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Orthonormality,
    Completeness,
    HaarBound,
    IdentityReduction,
    WellLocalized,
    Counterexample,
    Paraproduct,
    Necessity,
    Sufficiency,
    ScalarCarleson,
    MatrixCarleson,
    ParaproductBound,
    StoppingDecay,
    OracleEquivalence,
    Determinism,
}

impl Preset {
    pub const ALL: [Preset; 15] = [
        Preset::Orthonormality,
        Preset::Completeness,
        Preset::HaarBound,
        Preset::IdentityReduction,
        Preset::WellLocalized,
        Preset::Counterexample,
        Preset::Paraproduct,
        Preset::Necessity,
        Preset::Sufficiency,
        Preset::ScalarCarleson,
        Preset::MatrixCarleson,
        Preset::ParaproductBound,
        Preset::StoppingDecay,
        Preset::OracleEquivalence,
        Preset::Determinism,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Orthonormality => "orthonormality",
            Preset::Completeness => "completeness",
            Preset::HaarBound => "haar-bound",
            Preset::IdentityReduction => "identity-reduction",
            Preset::WellLocalized => "well-localized",
            Preset::Counterexample => "counterexample",
            Preset::Paraproduct => "paraproduct",
            Preset::Necessity => "necessity",
            Preset::Sufficiency => "sufficiency",
            Preset::ScalarCarleson => "scalar-carleson",
            Preset::MatrixCarleson => "matrix-carleson",
            Preset::ParaproductBound => "paraproduct-bound",
            Preset::StoppingDecay => "stopping-decay",
            Preset::OracleEquivalence => "oracle-equivalence",
            Preset::Determinism => "determinism",
        }
    }

    /// Position in the acceptance list, starting at 1.
    pub fn criterion(&self) -> usize {
        Preset::ALL.iter().position(|p| p == self).expect("listed") + 1
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Ok(k) = s.parse::<usize>() {
            return Preset::ALL
                .get(k.wrapping_sub(1))
                .copied()
                .ok_or_else(|| Error::BadParams(format!("no preset number {k}")));
        }
        Preset::ALL
            .iter()
            .find(|p| p.name() == s)
            .copied()
            .ok_or_else(|| Error::BadParams(format!("unknown preset '{s}'")))
    }
}

/// Parses `"all"` or a comma list of preset names or numbers.
pub fn parse_presets(s: &str) -> Result<Vec<Preset>> {
    if s == "all" {
        return Ok(Preset::ALL.to_vec());
    }
    s.split(',').map(|p| p.trim().parse()).collect()
}

/// Parses `a..b` (inclusive), `a..=b`, a single seed or a comma list of those.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::BadParams(format!("cannot parse seeds '{s}'"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim) {
        if let Some((a, b)) = part.split_once("..") {
            let b = b.strip_prefix('=').unwrap_or(b);
            let a: u64 = a.parse().map_err(|_| bad())?;
            let b: u64 = b.parse().map_err(|_| bad())?;
            if b < a {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    Ok(out)
}

/// SplitMix64 step, used to derive independent streams from one seed.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The weight family used by every suite, cycling through the generators.
pub fn suite_weight_kind(d: usize, seed: u64) -> WeightKind {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 77));
    match seed % 4 {
        0 => WeightKind::RandomA2 {
            eccentricity: 4.0,
            angle_scale: 1.0,
        },
        1 => WeightKind::RandomA2 {
            eccentricity: 16.0,
            angle_scale: 0.5,
        },
        2 if d >= 2 => WeightKind::RotatingDiagonal {
            eccentricity: 8.0,
            turns: 1.0 + (seed / 4 % 3) as f64,
        },
        _ => WeightKind::ScalarPower {
            exponent: rng.random_range(-0.6..1.5),
            center: rng.random_range(0.0..1.0),
        },
    }
}

pub fn suite_weight(d: usize, depth: u32, seed: u64, stream: u64) -> Result<WeightGrid> {
    let s = mix_seed(seed, stream);
    generate_weight(&suite_weight_kind(d, s), d, depth, s)
}

/// Band operators of radius at most `r` drawn for the suites.
pub fn suite_operator_kind(r: u32, seed: u64) -> OperatorKind {
    match seed % 4 {
        0 => OperatorKind::RandomBand { radius: r, density: 1.0 },
        1 => OperatorKind::RandomBand { radius: r, density: 0.4 },
        2 => OperatorKind::RandomMultiplier { amplitude: 2.0 },
        _ if r >= 1 => OperatorKind::Shift {
            left: 1.0 + (seed % 5) as f64 * 0.25,
            right: -0.5,
        },
        _ => OperatorKind::RandomBand { radius: r, density: 0.7 },
    }
}

pub fn suite_operator(d: usize, depth: u32, r: u32, seed: u64) -> Result<BandOperator> {
    let s = mix_seed(seed, 3);
    let op = crate::band::generate_operator(&suite_operator_kind(r, seed), d, depth, s)?;
    // declared radius is r for every suite operator
    BandOperator::new(d, depth, r, op.entries().iter().copied())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub preset: Preset,
    pub seed: u64,
    pub case: String,
    pub passed: bool,
    pub metrics: BTreeMap<String, f64>,
    pub failures: Vec<String>,
}

impl CaseResult {
    fn new(preset: Preset, seed: u64, case: String) -> Self {
        Self {
            preset,
            seed,
            case,
            passed: true,
            metrics: BTreeMap::new(),
            failures: Vec::new(),
        }
    }

    fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    /// Records `value` and fails the case unless `ok`.
    fn require(&mut self, name: &str, value: f64, ok: bool) {
        self.metric(name, value);
        if !ok {
            self.passed = false;
            self.failures.push(format!("{name} = {value:e}"));
        }
    }

    fn flag(&mut self, name: &str, ok: bool) {
        self.require(name, if ok { 1.0 } else { 0.0 }, ok);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetSummary {
    pub preset: Preset,
    pub criterion: usize,
    pub cases: usize,
    pub failed: usize,
    /// Largest value of every metric over all cases.
    pub maxima: BTreeMap<String, f64>,
    pub failures: Vec<String>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub seeds: Vec<u64>,
    pub passed: bool,
    pub summaries: Vec<PresetSummary>,
    pub cases: Vec<CaseResult>,
}

impl SweepReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Long format: one line per (case, metric).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("preset,seed,case,passed,metric,value\n");
        for c in &self.cases {
            for (k, v) in &c.metrics {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    c.preset, c.seed, c.case, c.passed, k, v
                ));
            }
        }
        out
    }
}

/// Number of sweep workers from `DYADIC_T1_WORKERS`, else the machine's parallelism.
pub fn workers_from_env() -> usize {
    std::env::var("DYADIC_T1_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

pub fn run_sweep(presets: &[Preset], seeds: &[u64], workers: usize) -> Result<SweepReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::BadParams(format!("cannot start {workers} workers: {e}")))?;
    let mut cases = Vec::new();
    let mut summaries = Vec::new();
    for &preset in presets {
        let per_seed: Vec<Result<Vec<CaseResult>>> =
            pool.install(|| seeds.par_iter().map(|&s| run_case(preset, s)).collect());
        let mut rows = Vec::new();
        for r in per_seed {
            rows.extend(r?);
        }
        summaries.push(summarize(preset, &rows));
        cases.extend(rows);
    }
    Ok(SweepReport {
        seeds: seeds.to_vec(),
        passed: summaries.iter().all(|s| s.passed),
        summaries,
        cases,
    })
}

fn summarize(preset: Preset, rows: &[CaseResult]) -> PresetSummary {
    let mut maxima: BTreeMap<String, f64> = BTreeMap::new();
    for row in rows {
        for (k, &v) in &row.metrics {
            let e = maxima.entry(k.clone()).or_insert(f64::NEG_INFINITY);
            *e = e.max(v);
        }
    }
    let failures: Vec<String> = rows
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("seed {} {}: {}", r.seed, r.case, r.failures.join("; ")))
        .collect();
    PresetSummary {
        preset,
        criterion: preset.criterion(),
        cases: rows.len(),
        failed: rows.iter().filter(|r| !r.passed).count(),
        maxima,
        passed: failures.is_empty(),
        failures,
    }
}

/// Evaluates every case a preset derives from one seed.
pub fn run_case(preset: Preset, seed: u64) -> Result<Vec<CaseResult>> {
    match preset {
        Preset::Orthonormality => weight_grid_cases(preset, seed, orthonormality),
        Preset::Completeness => weight_grid_cases(preset, seed, completeness),
        Preset::HaarBound => weight_grid_cases(preset, seed, haar_bound),
        Preset::IdentityReduction => identity_reduction(seed),
        Preset::WellLocalized => well_localized(seed),
        Preset::Counterexample => counterexample(seed),
        Preset::Paraproduct => paraproduct(seed),
        Preset::Necessity => certify_cases(preset, seed),
        Preset::Sufficiency => certify_cases(preset, seed),
        Preset::ScalarCarleson => scalar_carleson(seed),
        Preset::MatrixCarleson => matrix_carleson(seed),
        Preset::ParaproductBound => paraproduct_bound(seed),
        Preset::StoppingDecay => weight_grid_cases(preset, seed, stopping_decay),
        Preset::OracleEquivalence => oracle_equivalence(seed),
        Preset::Determinism => determinism(seed),
    }
}

const DIMS: [usize; 3] = [1, 2, 3];
const DEPTHS: [u32; 4] = [3, 4, 5, 6];

fn weight_grid_cases(
    preset: Preset,
    seed: u64,
    f: fn(&mut CaseResult, &WeightGrid, u64) -> Result<()>,
) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for d in DIMS {
        for depth in DEPTHS {
            let w = suite_weight(d, depth, seed, 1)?;
            let mut row = CaseResult::new(preset, seed, format!("d{d}-n{depth}"));
            f(&mut row, &w, seed)?;
            out.push(row);
        }
    }
    Ok(out)
}

fn orthonormality(row: &mut CaseResult, w: &WeightGrid, _seed: u64) -> Result<()> {
    let sys = HaarSystem::build(w)?;
    let n = sys.len();
    let dev = (sys.gram() - DMatrix::identity(n, n)).amax();
    row.require("gram_max_dev", dev, dev <= tolerance::GRAM);
    Ok(())
}

fn random_function(d: usize, depth: u32, rng: &mut ChaCha8Rng) -> WeightedFunction {
    WeightedFunction::from_flat(
        d,
        depth,
        DVector::from_fn(d << depth, |_, _| rng.sample(StandardNormal)),
    )
    .expect("finite values")
}

fn completeness(row: &mut CaseResult, w: &WeightGrid, seed: u64) -> Result<()> {
    let sys = HaarSystem::build(w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 5));
    let (mut round_trip, mut parseval, mut expectation) = (0.0f64, 0.0f64, 0.0f64);
    let mut expectation_ratio = 0.0f64;
    for _ in 0..10 {
        let f = random_function(w.d(), w.depth(), &mut rng);
        let c = sys.analyze(&f)?;
        let back = sys.synthesize(&c)?;
        round_trip = round_trip.max((back.values() - f.values()).norm() / f.values().norm());
        let norm = f.norm_sq(w)?;
        parseval = parseval.max((c.values.norm_squared() - norm).abs() / norm);
        let e = expectation_bound(w, &f)?;
        expectation = expectation.max(e.max_excess);
        expectation_ratio = expectation_ratio.max(e.max_ratio);
    }
    row.require("round_trip_rel", round_trip, round_trip <= tolerance::ROUND_TRIP);
    row.require("parseval_rel", parseval, parseval <= tolerance::PARSEVAL);
    row.require("expectation_excess", expectation, expectation <= tolerance::EXPECTATION);
    row.metric("expectation_ratio", expectation_ratio);
    Ok(())
}

fn haar_bound(row: &mut CaseResult, w: &WeightGrid, _seed: u64) -> Result<()> {
    let cert = HaarSystem::build(w)?.haar_bound_certificate();
    let bound = (w.d() as f64).sqrt();
    row.metric("certificate", cert);
    row.require("certificate_over_bound", cert / bound, cert <= bound + tolerance::HAAR_BOUND);
    Ok(())
}

fn identity_reduction(seed: u64) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for d in DIMS {
        for depth in DEPTHS {
            let w = WeightGrid::identity(d, depth)?;
            let sys = HaarSystem::build(&w)?;
            let mut w_dev = 0.0f64;
            for block in sys.blocks() {
                let size = block.interval.measure().sqrt();
                for &wj in &block.w {
                    w_dev = w_dev.max((wj - size).abs());
                }
            }
            let mut h_dev = 0.0f64;
            for k in 0..sys.len() {
                let standard = standard_synthesize(&CoeffVector::unit(d, depth, k));
                h_dev = h_dev.max((sys.basis_function(k).values() - standard.values()).amax());
            }
            let mut row = CaseResult::new(Preset::IdentityReduction, seed, format!("d{d}-n{depth}"));
            row.require("w_dev", w_dev, w_dev <= tolerance::IDENTITY);
            row.require("haar_dev", h_dev, h_dev <= tolerance::IDENTITY);
            out.push(row);
        }
    }
    Ok(out)
}

fn well_localized(seed: u64) -> Result<Vec<CaseResult>> {
    let depth = DEPTHS[(seed % 4) as usize];
    let mut out = Vec::new();
    for d in DIMS {
        let w = suite_weight(d, depth, seed, 1)?;
        let v = suite_weight(d, depth, seed, 2)?;
        for r in 0..=2 {
            let t = suite_operator(d, depth, r, seed)?;
            let report = t.is_well_localized(&w, &v, r)?;
            let mut row = CaseResult::new(Preset::WellLocalized, seed, format!("d{d}-n{depth}-r{r}"));
            row.flag("is_band", t.is_band(r));
            row.metric("scale", report.scale);
            row.require(
                "violation_ratio",
                crate::certify::ratio(report.worst_violation, report.scale),
                report.passed,
            );
            out.push(row);
        }
    }
    Ok(out)
}

fn counterexample(seed: u64) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for d in DIMS {
        let depth = 2 + (seed % 4) as u32;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 11 + d as u64));
        let level = rng.random_range(1..depth);
        let k0 = DyadicInterval::new(level, rng.random_range(0..1u64 << level))?;
        let t = crate::band::generate_operator(&OperatorKind::Counterexample { k0 }, d, depth, mix_seed(seed, 12))?;
        let id = WeightGrid::identity(d, depth)?;
        let relaxed = t.check_well_localized(&id, &id, 0, LocalizationMode::Relaxed)?;
        let full = t.check_well_localized(&id, &id, 0, LocalizationMode::Full)?;
        let mut row = CaseResult::new(
            Preset::Counterexample,
            seed,
            format!("d{d}-n{depth}-k{}.{}", k0.level, k0.index),
        );
        row.require(
            "relaxed_violation_ratio",
            crate::certify::ratio(relaxed.worst_violation, relaxed.scale),
            relaxed.passed,
        );
        row.require(
            "full_violation_ratio",
            crate::certify::ratio(full.worst_violation, full.scale),
            !full.passed,
        );
        let same_level = full
            .witness
            .map(|wt| wt.j.level == k0.level && wt.i.level == k0.level + 1)
            .unwrap_or(false);
        row.flag("witness_at_k0_level", same_level);
        out.push(row);
    }
    Ok(out)
}

fn paraproduct(seed: u64) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for d in DIMS {
        for r in 0..=1u32 {
            let depth = r + 1 + (seed % (5 - r as u64)) as u32;
            let w = suite_weight(d, depth, seed, 1)?;
            let v = suite_weight(d, depth, seed, 2)?;
            let t = suite_operator(d, depth, r, seed)?;
            let tt = t.transpose();
            let forward = Workspace::new(&t, &w, &v)?;
            let dual = Workspace::new(&tt, &v, &w)?;
            let m = forward.matrix_form();
            let cw = check_paraproduct(&forward.paraproduct(r)?, &m, d, depth, r);
            let cv = check_paraproduct(&dual.paraproduct(r)?, &m.transpose(), d, depth, r);
            let mut row = CaseResult::new(Preset::Paraproduct, seed, format!("d{d}-n{depth}-r{r}"));
            row.metric("vanishing_rel", cw.vanishing_max.max(cv.vanishing_max) / cw.scale.max(cv.scale));
            row.metric(
                "agreement_rel",
                cw.agreement_max.max(cw.outside_max).max(cv.agreement_max).max(cv.outside_max)
                    / cw.scale.max(cv.scale),
            );
            row.flag("decomposition_holds", cw.passed && cv.passed);
            out.push(row);
        }
    }
    Ok(out)
}

/// The certification instances shared by the necessity and sufficiency presets.
pub fn certify_instances(seed: u64) -> Vec<(usize, u32, u32)> {
    let depth = DEPTHS[(seed % 4) as usize];
    DIMS.iter()
        .flat_map(|&d| (0..=2u32).map(move |r| (d, depth, r)))
        .collect()
}

fn certify_cases(preset: Preset, seed: u64) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for (d, depth, r) in certify_instances(seed) {
        let w = suite_weight(d, depth, seed, 1)?;
        let v = suite_weight(d, depth, seed, 2)?;
        let t = suite_operator(d, depth, r, seed)?;
        let opts = CertifyOptions {
            radius: r,
            c_cfg: frozen::k_reg(d),
            samples: 16,
            seed: mix_seed(seed, 4),
        };
        let report = certify(&t, &w, &v, &opts)?;
        let c = report.constants;
        let norm = report.measured_norm;
        let mut row = CaseResult::new(preset, seed, format!("d{d}-n{depth}-r{r}"));
        row.metric("measured_norm", norm);
        match preset {
            Preset::Necessity => {
                row.metric("a1_over_norm", crate::certify::ratio(c.a1, norm));
                row.metric("a2_over_norm", crate::certify::ratio(c.a2, norm));
                row.metric("a3_over_norm", crate::certify::ratio(c.a3, norm));
                row.metric("a1_local_minus_a1", c.a1_local - c.a1);
                row.metric("a2_local_minus_a2", c.a2_local - c.a2);
                row.flag("necessity_ok", report.necessity_ok);
            }
            _ => {
                let k = frozen::k_reg(d);
                let ratio = report.sufficiency_ratio;
                row.require("sufficiency_ratio", ratio, ratio <= k);
                row.require(
                    "sufficiency_regression",
                    ratio,
                    ratio <= frozen::lookup(&frozen::SUFFICIENCY_MAX, d),
                );
                row.flag("below_thm1", norm <= report.bound_thm1);
                row.flag("below_thm2", norm <= report.bound_thm2);
                row.metric("sufficiency_ratio_local", report.sufficiency_ratio_local);
                let pairing = report.haar_pairing_ratio;
                row.require("pairing_ratio", pairing, pairing <= k);
                row.require(
                    "pairing_regression",
                    pairing,
                    pairing <= frozen::lookup(&frozen::PAIRING_MAX, d),
                );
            }
        }
        out.push(row);
    }
    Ok(out)
}

/// Dense oracle for the scalar embedding with `W ≡ 1`: builds
/// `Σ_I A_I (𝟏_I/|I|)(𝟏_I/|I|)ᵀ` against the `L²` Gram of the leaves.
fn scalar_embedding_oracle(seq: &CarlesonInstance) -> f64 {
    let depth = seq.depth();
    let n = 1usize << depth;
    let leaf = 1.0 / n as f64;
    let mut q = DMatrix::<f64>::zeros(n, n);
    for id in 0..(2 * n - 1) {
        let i = DyadicInterval::from_node_id(id);
        let a = seq.get(&i)[(0, 0)];
        let range = i.leaf_range(depth);
        for x in range.clone() {
            for y in range.clone() {
                // f(L) = g(L)/√|L| makes the Gram the identity
                q[(x, y)] += a * leaf / (i.measure() * i.measure());
            }
        }
    }
    SymmetricEigen::new(q).eigenvalues.max()
}

fn scalar_carleson(seed: u64) -> Result<Vec<CaseResult>> {
    let depth = 1 + (seed % 4) as u32;
    let w = WeightGrid::identity(1, depth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 6));
    let mut out = Vec::new();
    for k in 0..2 {
        let values: Vec<f64> = (0..(2usize << depth) - 1)
            .map(|id| {
                if rng.random::<f64>() < 0.3 {
                    0.0
                } else {
                    DyadicInterval::from_node_id(id).measure() * rng.random_range(0.0..2.0)
                }
            })
            .collect();
        let seq = CarlesonInstance::from_fn(1, depth, |i| {
            DMatrix::from_element(1, 1, values[i.node_id()])
        })?;
        let sharp = embedding_sharp_constant(&seq, &w)?;
        let c1 = cet1_testing_constant(&seq, &w)?;
        let oracle = scalar_embedding_oracle(&seq);
        let mut row = CaseResult::new(Preset::ScalarCarleson, seed, format!("n{depth}-s{k}"));
        row.require("sharp_over_cet1", crate::certify::ratio(sharp, c1), sharp <= 4.0 * c1);
        let err = (sharp - oracle).abs() / oracle.max(f64::MIN_POSITIVE);
        row.require("oracle_rel_err", err, err <= tolerance::ORACLE || sharp == oracle);
        out.push(row);
    }
    Ok(out)
}

/// Random PSD sequence normalized by the weight averages.
pub fn suite_sequence(w: &WeightGrid, seed: u64) -> Result<CarlesonInstance> {
    let d = w.d();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 8));
    let mats: Vec<DMatrix<f64>> = w
        .tree()
        .intervals()
        .map(|i| {
            if rng.random::<f64>() < 0.25 {
                return DMatrix::zeros(d, d);
            }
            let b = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let s = sym_inv_sqrt(&w.average(&i).expect("in tree"));
            &s * (&b * b.transpose()) * &s * i.measure()
        })
        .collect();
    CarlesonInstance::from_fn(d, w.depth(), |i| mats[i.node_id()].clone())
}

fn matrix_carleson(seed: u64) -> Result<Vec<CaseResult>> {
    let depth = 3 + (seed % 3) as u32;
    let mut out = Vec::new();
    for d in DIMS {
        let w = suite_weight(d, depth, seed, 1)?;
        let seq = suite_sequence(&w, seed)?;
        let sharp = embedding_sharp_constant(&seq, &w)?;
        let c2 = cet2_testing_constant(&seq, &w)?;
        let ch = w.characteristics(16, mix_seed(seed, 4))?;
        let ratio = crate::certify::ratio(sharp, c2 * ch.r2_lower * ch.a2);
        let mut homogeneity = 0.0f64;
        for t in [0.5, 2.0, 10.0] {
            let scaled = seq.scaled(t)?;
            let s = embedding_sharp_constant(&scaled, &w)?;
            homogeneity = homogeneity.max((s - t * sharp).abs() / (t * sharp).max(f64::MIN_POSITIVE));
            let s2 = cet2_testing_constant(&scaled, &w)?;
            homogeneity = homogeneity.max((s2 - t * c2).abs() / (t * c2).max(f64::MIN_POSITIVE));
        }
        let mut row = CaseResult::new(Preset::MatrixCarleson, seed, format!("d{d}-n{depth}"));
        row.require("embedding_ratio", ratio, ratio <= frozen::k_reg(d));
        row.require(
            "embedding_regression",
            ratio,
            ratio <= frozen::lookup(&frozen::EMBEDDING_MAX, d),
        );
        row.require("homogeneity_rel", homogeneity, homogeneity <= tolerance::HOMOGENEITY);
        out.push(row);
    }
    Ok(out)
}

fn paraproduct_bound(seed: u64) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for d in DIMS {
        for r in 0..=1u32 {
            let depth = 3 + ((seed + r as u64) % 3) as u32;
            let w = suite_weight(d, depth, seed, 1)?;
            let v = suite_weight(d, depth, seed, 2)?;
            let t = suite_operator(d, depth, r, seed)?;
            let ws = Workspace::new(&t, &w, &v)?;
            let a1_local = ws.testing_a1_local();
            let seq = carleson_from_operator(&t, &w, &v, r)?;
            let c2 = cet2_testing_constant(&seq, &w)?;
            let pi = matrix_norm(&ws.paraproduct(r)?);
            let sharp = embedding_sharp_constant(&seq, &w)?;
            let b_w = w.characteristics(16, mix_seed(seed, 4))?.b_w;
            let ratio = crate::certify::ratio(pi, a1_local * b_w);
            let mut row = CaseResult::new(Preset::ParaproductBound, seed, format!("d{d}-n{depth}-r{r}"));
            row.require(
                "cet2_excess",
                c2 - a1_local * a1_local,
                c2 <= a1_local * a1_local + tolerance::CET_CHAIN,
            );
            row.require("paraproduct_ratio", ratio, ratio <= frozen::k_reg(d));
            row.require(
                "paraproduct_regression",
                ratio,
                ratio <= frozen::lookup(&frozen::PARAPRODUCT_MAX, d),
            );
            let identity = (pi * pi - sharp).abs() / sharp.max(f64::MIN_POSITIVE);
            row.require("norm_embedding_rel", identity, identity <= 1e-8 || pi == 0.0);
            out.push(row);
        }
    }
    Ok(out)
}

fn stopping_decay(row: &mut CaseResult, w: &WeightGrid, _seed: u64) -> Result<()> {
    let search = search_lambda(w)?;
    row.metric("a2", search.a2);
    row.flag("lambda_found", search.multiplier.is_some());
    let m = search.multiplier.unwrap_or(f64::INFINITY);
    if search.multiplier.is_some() {
        row.require("lambda_multiplier", m, m <= frozen::lookup(&frozen::LAMBDA_MAX, w.d()));
        row.metric("generations", search.decay.len() as f64);
    }
    Ok(())
}

/// One-sided Jacobi: the largest singular value of `m`.
pub fn jacobi_svd_max(m: &DMatrix<f64>) -> f64 {
    let mut u = m.clone();
    let n = u.ncols();
    for _ in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = u.column(p).norm_squared();
                let beta = u.column(q).norm_squared();
                let gamma = u.column(p).dot(&u.column(q));
                if gamma == 0.0 || gamma.abs() <= 1e-16 * (alpha * beta).sqrt() {
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

/// Generalized eigenproblem `Q g = λ G g` built leaf by leaf, with
/// `G = diag(|L| W(L)^{-1})` whitened through `|L|^{1/2} W(L)^{1/2}`.
pub fn embedding_dense_oracle(seq: &CarlesonInstance, w: &WeightGrid) -> f64 {
    let (d, depth) = (w.d(), w.depth());
    let n = d << depth;
    let leaf = (-(depth as f64)).exp2();
    let mut q = DMatrix::<f64>::zeros(n, n);
    let whiten: Vec<DMatrix<f64>> = w.leaves().iter().map(|m| sym_sqrt(m) * leaf.sqrt()).collect();
    for k in 0..n {
        for l in 0..n {
            let (lk, ck) = (k / d, k % d);
            let (ll, cl) = (l / d, l % d);
            let mut s = 0.0;
            for i in w.tree().intervals() {
                let range = i.leaf_range(depth);
                if !range.contains(&lk) || !range.contains(&ll) {
                    continue;
                }
                let fk = whiten[lk].column(ck) * (leaf / i.measure()) / leaf;
                let fl = whiten[ll].column(cl) * (leaf / i.measure()) / leaf;
                s += (seq.get(&i) * fl).dot(&fk);
            }
            q[(k, l)] = s;
        }
    }
    SymmetricEigen::new(q).eigenvalues.max()
}

fn oracle_equivalence(seed: u64) -> Result<Vec<CaseResult>> {
    let depth = 2 + (seed % 3) as u32;
    let mut out = Vec::new();
    for d in DIMS {
        let w = suite_weight(d, depth, seed, 1)?;
        let v = suite_weight(d, depth, seed, 2)?;
        let r = (seed % 3) as u32;
        let t = suite_operator(d, depth, r, seed)?;
        let m = t.matrix_form(&w, &v)?;
        let norm = matrix_norm(&m);
        let svd = jacobi_svd_max(&m);
        let seq = suite_sequence(&w, seed)?;
        let sharp = embedding_sharp_constant(&seq, &w)?;
        let dense = embedding_dense_oracle(&seq, &w);
        let form = embedding_form(&seq, &w)?;
        let mut row = CaseResult::new(Preset::OracleEquivalence, seed, format!("d{d}-n{depth}-r{r}"));
        let e1 = (norm - svd).abs() / svd.max(f64::MIN_POSITIVE);
        row.require("norm_rel_err", e1, e1 <= tolerance::ORACLE || norm == svd);
        let e2 = (sharp - dense).abs() / dense.max(f64::MIN_POSITIVE);
        row.require("embedding_rel_err", e2, e2 <= tolerance::ORACLE || sharp == dense);
        row.metric("form_dim", form.nrows() as f64);
        out.push(row);
    }
    Ok(out)
}

/// Runs a light preset mix on one and on four workers and compares the
/// serialized reports byte for byte.
fn determinism(seed: u64) -> Result<Vec<CaseResult>> {
    let presets = [Preset::WellLocalized, Preset::MatrixCarleson, Preset::StoppingDecay];
    let one = run_sweep(&presets, &[seed], 1)?.to_json();
    let four = run_sweep(&presets, &[seed], 4)?.to_json();
    let mut row = CaseResult::new(Preset::Determinism, seed, "workers-1-vs-4".into());
    row.flag("identical", one == four);
    row.metric("report_bytes", one.len() as f64);
    Ok(vec![row])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_parsing() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(parse_seeds("0..=2,7").unwrap(), vec![0, 1, 2, 7]);
        assert_eq!(parse_seeds("5").unwrap(), vec![5]);
        assert!(parse_seeds("3..1").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn preset_parsing() {
        assert_eq!(parse_presets("all").unwrap().len(), 15);
        assert_eq!(
            parse_presets("1,well-localized").unwrap(),
            vec![Preset::Orthonormality, Preset::WellLocalized]
        );
        assert_eq!("14".parse::<Preset>().unwrap(), Preset::OracleEquivalence);
        assert!("16".parse::<Preset>().is_err());
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
    }

    #[test]
    fn mixed_seeds_differ() {
        assert_ne!(mix_seed(0, 1), mix_seed(0, 2));
        assert_ne!(mix_seed(1, 1), mix_seed(0, 1));
        assert_eq!(mix_seed(9, 3), mix_seed(9, 3));
    }

    #[test]
    fn suite_operators_have_declared_radius() {
        for seed in 0..8 {
            for r in 0..3 {
                let t = suite_operator(2, 4, r, seed).unwrap();
                assert_eq!(t.radius(), r);
                assert!(t.is_band(r));
            }
        }
    }

    #[test]
    fn near_degenerate_embedding_top() {
        // top two eigenvalues 7.3607 and 7.3098; power iteration used to stop on the second
        let w = suite_weight(1, 5, 20, 1).unwrap();
        let seq = suite_sequence(&w, 20).unwrap();
        let sharp = embedding_sharp_constant(&seq, &w).unwrap();
        let reference = SymmetricEigen::new(embedding_form(&seq, &w).unwrap())
            .eigenvalues
            .max();
        assert!((sharp - reference).abs() <= 1e-10 * reference, "{sharp} vs {reference}");
        assert!((sharp - embedding_dense_oracle(&seq, &w)).abs() <= 1e-9 * reference);
    }

    #[test]
    fn wide_spectrum_paraproduct_norm() {
        // the Gram of this paraproduct once sent the QR eigensolver to infinity
        let (seed, d, depth, r) = (16, 2, 5, 1);
        let w = suite_weight(d, depth, seed, 1).unwrap();
        let v = suite_weight(d, depth, seed, 2).unwrap();
        let t = suite_operator(d, depth, r, seed).unwrap();
        let pi = Workspace::new(&t, &w, &v).unwrap().paraproduct(r).unwrap();
        let norm = matrix_norm(&pi);
        assert!(norm.is_finite());
        assert!((norm - jacobi_svd_max(&pi)).abs() <= 1e-10 * norm);
    }

    #[test]
    fn small_sweep_passes() {
        let report = run_sweep(&[Preset::Orthonormality, Preset::Counterexample], &[0, 1], 2).unwrap();
        assert!(report.passed, "{:?}", report.summaries);
        assert!(report.to_csv().starts_with("preset,seed,case,passed,metric,value\n"));
    }
}
