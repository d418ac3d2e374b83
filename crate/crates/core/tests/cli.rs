use std::path::Path;
use std::process::Command;

use dyadic_t1::{generate_weight, HaarSystem, WeightGrid, WeightKind};
use serde_json::Value;

fn dyadic(dir: &Path, args: &[&str]) -> (String, i32) {
    let out = Command::new(env!("CARGO_BIN_EXE_dyadic-t1"))
        .current_dir(dir)
        .env("DYADIC_T1_WORKERS", "1")
        .args(args)
        .output()
        .expect("binary runs");
    (String::from_utf8(out.stdout).unwrap(), out.status.code().unwrap())
}

fn report(text: &str) -> Value {
    serde_json::from_str(text).expect("json report")
}

#[test]
fn generated_weight_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let (_, code) = dyadic(
        dir.path(),
        &["gen-weight", "--kind", "random-a2", "--dim", "2", "--depth", "4", "--seed", "7", "--out", "w.json"],
    );
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(dir.path().join("w.json")).unwrap();
    let w = WeightGrid::from_json(&text).unwrap();
    let direct = generate_weight(
        &WeightKind::RandomA2 { eccentricity: 4.0, angle_scale: 1.0 },
        2,
        4,
        7,
    )
    .unwrap();
    assert_eq!(w.to_json(), direct.to_json());

    let (out, code) = dyadic(dir.path(), &["haar-check", "--weight", "w.json"]);
    assert_eq!(code, 0, "{out}");
    let r = report(&out);
    assert_eq!(r["passed"], Value::Bool(true));
    let gram = r["result"]["gram_max_dev"].as_f64().unwrap();
    let sys = HaarSystem::build(&direct).unwrap();
    let n = sys.len();
    let expected = (sys.gram() - nalgebra::DMatrix::identity(n, n)).amax();
    assert_eq!(gram, expected);
}

#[test]
fn certify_pipeline_passes_on_band_operator() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(dyadic(p, &["gen-weight", "--dim", "2", "--depth", "4", "--seed", "3", "--out", "w.json"]).1, 0);
    assert_eq!(
        dyadic(p, &["op", "gen", "--dim", "2", "--depth", "4", "--radius", "1", "--seed", "3", "--out", "t.json"]).1,
        0
    );
    let (out, code) = dyadic(p, &["op", "check", "--op", "t.json", "--weight", "w.json"]);
    assert_eq!(code, 0, "{out}");
    let (out, code) = dyadic(p, &["certify", "--op", "t.json", "--weight", "w.json"]);
    assert_eq!(code, 0, "{out}");
    let r = report(&out);
    assert_eq!(r["command"], "certify");
    assert!(r["failures"].as_array().unwrap().is_empty());
    let (again, _) = dyadic(p, &["certify", "--op", "t.json", "--weight", "w.json"]);
    assert_eq!(out, again);
}

#[test]
fn counterexample_fails_the_full_check() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    dyadic(p, &["gen-weight", "--kind", "identity", "--dim", "1", "--depth", "4", "--out", "id.json"]);
    dyadic(p, &["op", "gen", "--kind", "counterexample", "--dim", "1", "--depth", "4", "--k0", "2,1", "--out", "t.json"]);
    let (out, code) = dyadic(p, &["op", "check", "--op", "t.json", "--weight", "id.json", "--radius", "0"]);
    assert_eq!(code, 1);
    let r = report(&out);
    assert_eq!(r["passed"], Value::Bool(false));
    assert!(r["failures"]
        .as_array()
        .unwrap()
        .iter()
        .all(|f| f["kind"] == "invariant" || f["kind"] == "tolerance"));
}

#[test]
fn unusable_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("bad.json"), "{not json").unwrap();
    let (out, code) = dyadic(p, &["haar-check", "--weight", "bad.json"]);
    assert_eq!(code, 2);
    assert_eq!(report(&out)["failures"][0]["kind"], "parse");
    assert_eq!(dyadic(p, &["haar-check", "--weight", "missing.json"]).1, 2);
    assert_eq!(dyadic(p, &["gen-weight", "--dim", "0"]).1, 2);
    assert_eq!(dyadic(p, &["gen-weight", "--depth", "11"]).1, 2);
    assert_eq!(dyadic(p, &["sweep", "--preset", "no-such-preset"]).1, 2);
}

#[test]
fn sweep_csv_is_independent_of_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let args = |w: &'static str| {
        vec!["--format", "csv", "sweep", "--preset", "orthonormality,well-localized,stopping-decay", "--seeds", "0..5", "--workers", w]
    };
    let (one, c1) = dyadic(p, &args("1"));
    let (three, c3) = dyadic(p, &args("3"));
    assert_eq!((c1, c3), (0, 0));
    assert_eq!(one, three);
    assert!(one.starts_with("preset,seed,case,passed,metric,value"));
}
