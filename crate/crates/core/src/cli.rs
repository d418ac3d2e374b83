//! Command-line front end.
//!
//! Generators print the artifact itself (weight, operator or Carleson JSON).
//! Every check prints a report `{command, passed, failures, result}` with
//! sorted keys. Exit status: 0 all checks pass, 1 a check failed, 2 the
//! input could not be used.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use crate::band::{generate_operator, BandOperator, LocalizationMode, OperatorKind};
use crate::carleson::{
    build_stopping_tree, carleson_from_operator, cet1_testing_constant, cet2_testing_constant,
    decays_geometrically, embedding_sharp_constant, search_lambda, stopping_decay, CarlesonInstance,
};
use crate::certify::{certify, CertifyOptions};
use crate::dyadic::DyadicInterval;
use crate::error::{Error, Result};
use crate::haar::HaarSystem;
use crate::suite::{
    frozen, parse_presets, parse_seeds, run_sweep, suite_operator_kind, suite_weight_kind,
    workers_from_env,
};
use crate::weight::{generate_weight, WeightGrid, WeightKind};

pub const MAX_DEPTH: u32 = 10;
pub const MAX_DIM: usize = 8;

#[derive(Debug, Parser)]
#[command(name = "dyadic-t1", version, about = "Matrix-weighted dyadic T1 toolkit")]
pub struct Cli {
    #[arg(long, value_enum, default_value_t = Format::Json, global = true)]
    pub format: Format,
    /// Write the output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a weight file.
    GenWeight(GenWeightArgs),
    /// Generate an operator file (same as `op gen`).
    GenOp(GenOpArgs),
    #[command(subcommand)]
    Op(OpCommand),
    /// Orthonormality and norm-bound checks for the adapted Haar system.
    HaarCheck(HaarCheckArgs),
    /// Testing constants, operator norm and both bounds.
    Certify(CertifyArgs),
    #[command(subcommand)]
    Carleson(CarlesonCommand),
    /// Stopping generations for one weight.
    StoppingTree(StoppingArgs),
    /// Exact norm of T_W : L²(W) → L²(V).
    Norm(PairArgs),
    /// Seeded batch run of the acceptance presets.
    Sweep(SweepArgs),
}

#[derive(Debug, Subcommand)]
pub enum OpCommand {
    Gen(GenOpArgs),
    /// Band and well-localized checks.
    Check(OpCheckArgs),
}

#[derive(Debug, Subcommand)]
pub enum CarlesonCommand {
    /// Testing and embedding constants of a sequence.
    Check(CarlesonCheckArgs),
    /// The sequence induced by an operator's paraproduct.
    FromOp(FromOpArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightChoice {
    Identity,
    ScalarPower,
    RotatingDiagonal,
    RandomA2,
    /// The family the sweeps draw from.
    Suite,
}

#[derive(Debug, Args)]
pub struct GenWeightArgs {
    #[arg(long, value_enum, default_value_t = WeightChoice::RandomA2)]
    pub kind: WeightChoice,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..=MAX_DIM as u64))]
    pub dim: u64,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..=MAX_DEPTH as i64))]
    pub depth: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4.0)]
    pub eccentricity: f64,
    #[arg(long, default_value_t = 1.0)]
    pub angle_scale: f64,
    #[arg(long, default_value_t = 0.5)]
    pub exponent: f64,
    #[arg(long, default_value_t = 0.5)]
    pub center: f64,
    #[arg(long, default_value_t = 1.0)]
    pub turns: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OperatorChoice {
    Identity,
    Zero,
    Multiplier,
    Shift,
    Counterexample,
    RandomBand,
    Suite,
}

#[derive(Debug, Args)]
pub struct GenOpArgs {
    #[arg(long, value_enum, default_value_t = OperatorChoice::RandomBand)]
    pub kind: OperatorChoice,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..=MAX_DIM as u64))]
    pub dim: u64,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..=MAX_DEPTH as i64))]
    pub depth: u32,
    #[arg(long, default_value_t = 1)]
    pub radius: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub density: f64,
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 1.0)]
    pub left: f64,
    #[arg(long, default_value_t = 1.0)]
    pub right: f64,
    /// Counterexample interval as `level,index`.
    #[arg(long, default_value = "1,0")]
    pub k0: String,
}

#[derive(Debug, Args)]
pub struct PairArgs {
    #[arg(long)]
    pub op: PathBuf,
    /// Domain weight W.
    #[arg(long)]
    pub weight: PathBuf,
    /// Target weight V; defaults to W.
    #[arg(long)]
    pub weight_v: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OpCheckArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    /// Defaults to the radius stored in the operator file.
    #[arg(long)]
    pub radius: Option<u32>,
    /// Only test pairs with |J| ≤ |I|.
    #[arg(long)]
    pub relaxed: bool,
}

#[derive(Debug, Args)]
pub struct HaarCheckArgs {
    #[arg(long)]
    pub weight: PathBuf,
    /// Include the full basis export in the report.
    #[arg(long)]
    pub export: bool,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    #[arg(long)]
    pub radius: Option<u32>,
    /// Dimensional constant in the bounds; defaults to the frozen regression constant.
    #[arg(long)]
    pub c_cfg: Option<f64>,
    #[arg(long, default_value_t = 16)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CarlesonCheckArgs {
    #[arg(long)]
    pub seq: PathBuf,
    #[arg(long)]
    pub weight: PathBuf,
    #[arg(long)]
    pub c_cfg: Option<f64>,
    #[arg(long, default_value_t = 16)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FromOpArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    #[arg(long)]
    pub radius: Option<u32>,
}

#[derive(Debug, Args)]
pub struct StoppingArgs {
    #[arg(long)]
    pub weight: PathBuf,
    /// Searches λ = m·d·[W]_{A₂}, m = 4, 8, …, 64 when omitted.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Root interval as `level,index`.
    #[arg(long, default_value = "0,0")]
    pub root: String,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// `all` or a comma list of preset names or numbers.
    #[arg(long, default_value = "all")]
    pub preset: String,
    /// Inclusive range `a..b` or a comma list.
    #[arg(long, default_value = "0..49")]
    pub seeds: String,
    /// Overrides the worker count from the environment.
    #[arg(long)]
    pub workers: Option<usize>,
}

/// Failure classes in a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Parse,
    Invariant,
    Tolerance,
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub kind: FailureKind,
    pub message: String,
}

impl Failure {
    fn tolerance(message: impl Into<String>) -> Self {
        Self {
            kind: FailureKind::Tolerance,
            message: message.into(),
        }
    }

    fn from_error(e: &Error) -> Self {
        let kind = match e {
            Error::Json(_) | Error::Io(_) => FailureKind::Parse,
            _ => FailureKind::Invariant,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

/// What a command produced.
pub enum Output {
    /// A generated file, printed verbatim.
    Artifact(String),
    Report {
        command: &'static str,
        result: Value,
        failures: Vec<Failure>,
        csv: Option<String>,
    },
}

impl Output {
    fn report(command: &'static str, result: impl Serialize, failures: Vec<Failure>) -> Self {
        Output::Report {
            command,
            result: serde_json::to_value(result).expect("report serializes"),
            failures,
            csv: None,
        }
    }
}

fn parse_interval(s: &str) -> Result<DyadicInterval> {
    let bad = || Error::InvalidInput(format!("expected 'level,index', got '{s}'"));
    let (l, k) = s.split_once(',').ok_or_else(bad)?;
    let l = l.trim().parse().map_err(|_| bad())?;
    let k = k.trim().parse().map_err(|_| bad())?;
    DyadicInterval::new(l, k)
}

fn check_shape(d: usize, depth: u32) -> Result<()> {
    if depth > MAX_DEPTH || d > MAX_DIM {
        return Err(Error::InvalidInput(format!(
            "d = {d}, depth = {depth} exceeds the limits d ≤ {MAX_DIM}, depth ≤ {MAX_DEPTH}"
        )));
    }
    Ok(())
}

fn load_weight(path: &Path) -> Result<WeightGrid> {
    let w = WeightGrid::read(path)?;
    check_shape(w.d(), w.depth())?;
    Ok(w)
}

fn load_pair(args: &PairArgs) -> Result<(BandOperator, WeightGrid, WeightGrid)> {
    let t = BandOperator::read(&args.op)?;
    check_shape(t.d(), t.depth())?;
    let w = load_weight(&args.weight)?;
    let v = match &args.weight_v {
        Some(p) => load_weight(p)?,
        None => w.clone(),
    };
    Ok((t, w, v))
}

pub fn weight_kind(args: &GenWeightArgs) -> WeightKind {
    match args.kind {
        WeightChoice::Identity => WeightKind::Identity,
        WeightChoice::ScalarPower => WeightKind::ScalarPower {
            exponent: args.exponent,
            center: args.center,
        },
        WeightChoice::RotatingDiagonal => WeightKind::RotatingDiagonal {
            eccentricity: args.eccentricity,
            turns: args.turns,
        },
        WeightChoice::RandomA2 => WeightKind::RandomA2 {
            eccentricity: args.eccentricity,
            angle_scale: args.angle_scale,
        },
        WeightChoice::Suite => suite_weight_kind(args.dim as usize, args.seed),
    }
}

pub fn operator_kind(args: &GenOpArgs) -> Result<OperatorKind> {
    Ok(match args.kind {
        OperatorChoice::Identity => OperatorKind::Identity,
        OperatorChoice::Zero => OperatorKind::Zero,
        OperatorChoice::Multiplier => OperatorKind::RandomMultiplier {
            amplitude: args.amplitude,
        },
        OperatorChoice::Shift => OperatorKind::Shift {
            left: args.left,
            right: args.right,
        },
        OperatorChoice::Counterexample => OperatorKind::Counterexample {
            k0: parse_interval(&args.k0)?,
        },
        OperatorChoice::RandomBand => OperatorKind::RandomBand {
            radius: args.radius,
            density: args.density,
        },
        OperatorChoice::Suite => suite_operator_kind(args.radius, args.seed),
    })
}

fn gen_weight(args: &GenWeightArgs) -> Result<Output> {
    let w = generate_weight(&weight_kind(args), args.dim as usize, args.depth, args.seed)?;
    Ok(Output::Artifact(w.to_json()))
}

fn gen_op(args: &GenOpArgs) -> Result<Output> {
    let t = generate_operator(&operator_kind(args)?, args.dim as usize, args.depth, args.seed)?;
    Ok(Output::Artifact(t.to_json()))
}

fn op_check(args: &OpCheckArgs) -> Result<Output> {
    let (t, w, v) = load_pair(&args.pair)?;
    let r = args.radius.unwrap_or(t.radius());
    let mode = if args.relaxed {
        LocalizationMode::Relaxed
    } else {
        LocalizationMode::Full
    };
    let is_band = t.is_band(r);
    let report = t.check_well_localized(&w, &v, r, mode)?;
    let mut failures = Vec::new();
    if !is_band {
        failures.push(Failure::tolerance(format!("not a band operator of radius {r}")));
    }
    if !report.passed {
        failures.push(Failure::tolerance(format!(
            "not well-localized with radius {r}: violation {:e} at scale {:e}",
            report.worst_violation, report.scale
        )));
    }
    Ok(Output::report(
        "op-check",
        json!({ "radius": r, "relaxed": args.relaxed, "is_band": is_band, "well_localized": report }),
        failures,
    ))
}

fn haar_check(args: &HaarCheckArgs) -> Result<Output> {
    let w = load_weight(&args.weight)?;
    let sys = HaarSystem::build(&w)?;
    let n = sys.len();
    let gram_max_dev = (sys.gram() - DMatrix::identity(n, n)).amax();
    let certificate = sys.haar_bound_certificate();
    let bound = (w.d() as f64).sqrt();
    let mut failures = Vec::new();
    if gram_max_dev > crate::suite::tolerance::GRAM {
        failures.push(Failure::tolerance(format!("gram deviation {gram_max_dev:e}")));
    }
    if certificate > bound + crate::suite::tolerance::HAAR_BOUND {
        failures.push(Failure::tolerance(format!("certificate {certificate} above sqrt(d)")));
    }
    let mut result = json!({
        "d": w.d(),
        "depth": w.depth(),
        "gram_max_dev": gram_max_dev,
        "certificate": certificate,
        "bound": bound,
    });
    if args.export {
        result["system"] = serde_json::to_value(sys.export()).expect("export serializes");
    }
    Ok(Output::report("haar-check", result, failures))
}

fn run_certify(args: &CertifyArgs) -> Result<Output> {
    let (t, w, v) = load_pair(&args.pair)?;
    let opts = CertifyOptions {
        radius: args.radius.unwrap_or(t.radius()),
        c_cfg: args.c_cfg.unwrap_or_else(|| frozen::k_reg(t.d())),
        samples: args.samples,
        seed: args.seed,
    };
    let report = certify(&t, &w, &v, &opts)?;
    let failures = report.failures.iter().map(|f| Failure::tolerance(f.clone())).collect();
    Ok(Output::report("certify", report, failures))
}

fn carleson_check(args: &CarlesonCheckArgs) -> Result<Output> {
    let seq = CarlesonInstance::read(&args.seq)?;
    check_shape(seq.d(), seq.depth())?;
    let w = load_weight(&args.weight)?;
    let cet1 = cet1_testing_constant(&seq, &w)?;
    let cet2 = cet2_testing_constant(&seq, &w)?;
    let sharp = embedding_sharp_constant(&seq, &w)?;
    let ch = w.characteristics(args.samples, args.seed)?;
    let c = args.c_cfg.unwrap_or_else(|| frozen::k_reg(w.d()));
    let bound = c * cet2 * ch.r2_lower * ch.a2;
    let mut failures = Vec::new();
    if sharp > bound * (1.0 + 1e-12) {
        failures.push(Failure::tolerance(format!("embedding constant {sharp} above {bound}")));
    }
    Ok(Output::report(
        "carleson-check",
        json!({
            "cet1": cet1,
            "cet2": cet2,
            "embedding_sharp": sharp,
            "characteristics": ch,
            "c_cfg": c,
            "bound": bound,
            "ratio": crate::certify::ratio(sharp, cet2 * ch.r2_lower * ch.a2),
        }),
        failures,
    ))
}

fn carleson_from_op(args: &FromOpArgs) -> Result<Output> {
    let (t, w, v) = load_pair(&args.pair)?;
    let seq = carleson_from_operator(&t, &w, &v, args.radius.unwrap_or(t.radius()))?;
    Ok(Output::Artifact(seq.to_json()))
}

fn stopping(args: &StoppingArgs) -> Result<Output> {
    let w = load_weight(&args.weight)?;
    let root = parse_interval(&args.root)?;
    let (lambda, search) = match args.lambda {
        Some(l) => (l, None),
        None => {
            let s = search_lambda(&w)?;
            let l = s.lambda.unwrap_or(64.0 * w.d() as f64 * s.a2);
            (l, Some(s))
        }
    };
    let tree = build_stopping_tree(&w, &root, lambda)?;
    let decay = stopping_decay(&tree);
    let mut failures = Vec::new();
    if !decays_geometrically(&decay) {
        failures.push(Failure::tolerance("generation measures do not decay like 2^-j"));
    }
    Ok(Output::report(
        "stopping-tree",
        json!({ "tree": tree, "decay": decay, "search": search }),
        failures,
    ))
}

fn norm(args: &PairArgs) -> Result<Output> {
    let (t, w, v) = load_pair(args)?;
    let norm = t.operator_norm(&w, &v)?;
    Ok(Output::report("norm", json!({ "norm": norm }), Vec::new()))
}

fn sweep(args: &SweepArgs) -> Result<Output> {
    let presets = parse_presets(&args.preset)?;
    let seeds = parse_seeds(&args.seeds)?;
    let workers = args.workers.unwrap_or_else(workers_from_env);
    let report = run_sweep(&presets, &seeds, workers)?;
    let failures = report
        .summaries
        .iter()
        .flat_map(|s| s.failures.iter().map(move |f| Failure::tolerance(format!("{}: {f}", s.preset))))
        .collect();
    let csv = report.to_csv();
    // per-case rows go to the CSV; the JSON report keeps the summaries
    Ok(Output::Report {
        command: "sweep",
        result: json!({ "seeds": report.seeds, "summaries": report.summaries }),
        failures,
        csv: Some(csv),
    })
}

fn dispatch(command: &Command) -> Result<Output> {
    match command {
        Command::GenWeight(a) => gen_weight(a),
        Command::GenOp(a) | Command::Op(OpCommand::Gen(a)) => gen_op(a),
        Command::Op(OpCommand::Check(a)) => op_check(a),
        Command::HaarCheck(a) => haar_check(a),
        Command::Certify(a) => run_certify(a),
        Command::Carleson(CarlesonCommand::Check(a)) => carleson_check(a),
        Command::Carleson(CarlesonCommand::FromOp(a)) => carleson_from_op(a),
        Command::StoppingTree(a) => stopping(a),
        Command::Norm(a) => norm(a),
        Command::Sweep(a) => sweep(a),
    }
}

fn flatten(prefix: &str, value: &Value, out: &mut Vec<(String, String)>) {
    let join = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                flatten(&join(k), v, out);
            }
        }
        Value::Array(items) => {
            for (k, v) in items.iter().enumerate() {
                flatten(&join(&k.to_string()), v, out);
            }
        }
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// Renders a report as sorted-key JSON or as `key,value` lines.
pub fn render_report(
    command: &str,
    result: &Value,
    failures: &[Failure],
    csv: Option<&str>,
    format: Format,
) -> String {
    let doc = json!({
        "command": command,
        "passed": failures.is_empty(),
        "failures": failures,
        "result": result,
    });
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&doc).expect("value serializes");
            s.push('\n');
            s
        }
        Format::Csv => {
            if let Some(csv) = csv {
                return csv.to_string();
            }
            let mut rows = Vec::new();
            flatten("", &doc, &mut rows);
            let mut s = String::from("key,value\n");
            for (k, v) in rows {
                s.push_str(&format!("{k},{v}\n"));
            }
            s
        }
    }
}

/// Runs one command line and returns the rendered output with the exit status.
pub fn execute(cli: &Cli) -> (String, i32) {
    match dispatch(&cli.command) {
        Ok(Output::Artifact(text)) => (text + "\n", 0),
        Ok(Output::Report {
            command,
            result,
            failures,
            csv,
        }) => {
            let code = if failures.is_empty() { 0 } else { 1 };
            (render_report(command, &result, &failures, csv.as_deref(), cli.format), code)
        }
        Err(e) => (
            render_report("error", &Value::Null, &[Failure::from_error(&e)], None, cli.format),
            2,
        ),
    }
}

/// Entry point for the binary: parses `args`, writes the output and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (text, code) = execute(&cli);
    match &cli.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &text) {
                eprintln!("cannot write {}: {e}", path.display());
                return 2;
            }
        }
        None => print!("{text}"),
    }
    code
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_in(dir: &Path, args: &[&str]) -> (String, i32) {
        let mut full = vec!["dyadic-t1".to_string()];
        full.extend(args.iter().map(|a| a.replace("{}", dir.to_str().unwrap())));
        let cli = Cli::try_parse_from(full).unwrap();
        execute(&cli)
    }

    #[test]
    fn identity_haar_check_passes() {
        let dir = tempfile::tempdir().unwrap();
        let w = WeightGrid::identity(2, 4).unwrap();
        std::fs::write(dir.path().join("w.json"), w.to_json()).unwrap();
        let (text, code) = run_in(dir.path(), &["haar-check", "--weight", "{}/w.json"]);
        assert_eq!(code, 0, "{text}");
        let v: Value = serde_json::from_str(&text).unwrap();
        assert!(v["result"]["gram_max_dev"].as_f64().unwrap() <= 1e-12);
    }

    #[test]
    fn identity_certify() {
        let dir = tempfile::tempdir().unwrap();
        let w = WeightGrid::identity(1, 3).unwrap();
        std::fs::write(dir.path().join("w.json"), w.to_json()).unwrap();
        let t = BandOperator::identity(1, 3).unwrap();
        std::fs::write(dir.path().join("t.json"), t.to_json()).unwrap();
        let (text, code) = run_in(
            dir.path(),
            &["certify", "--op", "{}/t.json", "--weight", "{}/w.json", "--radius", "0"],
        );
        assert_eq!(code, 0, "{text}");
        let v: Value = serde_json::from_str(&text).unwrap();
        let r = &v["result"];
        assert!((r["constants"]["a1"].as_f64().unwrap() - 1.0).abs() < 1e-12);
        assert!((r["constants"]["a2"].as_f64().unwrap() - 1.0).abs() < 1e-12);
        assert!((r["measured_norm"].as_f64().unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r["necessity_ok"], Value::Bool(true));
    }

    #[test]
    fn input_errors_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("bad.json"), "{ not json").unwrap();
        let (text, code) = run_in(dir.path(), &["haar-check", "--weight", "{}/bad.json"]);
        assert_eq!(code, 2);
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["failures"][0]["kind"], "parse");
        let (_, code) = run_in(dir.path(), &["haar-check", "--weight", "{}/missing.json"]);
        assert_eq!(code, 2);
        assert!(Cli::try_parse_from(["dyadic-t1", "gen-weight", "--depth", "11"]).is_err());
        assert!(Cli::try_parse_from(["dyadic-t1", "gen-weight", "--dim", "9"]).is_err());
    }

    #[test]
    fn check_failure_exits_one() {
        let dir = tempfile::tempdir().unwrap();
        let (op, _) = run_in(
            dir.path(),
            &["gen-op", "--kind", "counterexample", "--dim", "1", "--depth", "3", "--k0", "1,0"],
        );
        std::fs::write(dir.path().join("t.json"), op).unwrap();
        std::fs::write(dir.path().join("w.json"), WeightGrid::identity(1, 3).unwrap().to_json()).unwrap();
        let base = ["op", "check", "--op", "{}/t.json", "--weight", "{}/w.json", "--radius", "0"];
        let (text, code) = run_in(dir.path(), &base);
        assert_eq!(code, 1, "{text}");
        let mut relaxed = base.to_vec();
        relaxed.push("--relaxed");
        let (text, code) = run_in(dir.path(), &relaxed);
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["result"]["well_localized"]["passed"], Value::Bool(true));
        // the counterexample couples distant same-level intervals, so it is not band
        assert_eq!(code, 1);
        assert_eq!(v["result"]["is_band"], Value::Bool(false));
    }

    #[test]
    fn interval_parsing() {
        assert_eq!(parse_interval("2,3").unwrap(), DyadicInterval::new(2, 3).unwrap());
        assert!(parse_interval("2").is_err());
        assert!(parse_interval("1,2").is_err());
    }
}
