//! End-to-end checks of the `cptree` binary: exit codes, run-directory
//! layout, bitwise determinism of numeric artifacts, and re-derivability
//! of reported results from the persisted configuration.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cptree"))
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn run_dir_of(output: &Output) -> PathBuf {
    let stdout = String::from_utf8_lossy(&output.stdout);
    let line = stdout.lines().next().expect("run summary line");
    let path = line.split(" -> ").nth(1).expect("run dir in summary");
    PathBuf::from(path.trim())
}

fn skewed_tree() -> Value {
    json!({
        "assets": 1,
        "root": {
            "S": [1.0],
            "children": [
                {"p": 0.6, "S": [3.0], "B": 0.0},
                {"p": 0.4, "S": [0.0], "B": 0.0},
            ],
        },
    })
}

#[test]
fn gate_prints_verdict_and_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "gate.json",
        &json!({"alpha": 0.5, "beta": 0.9, "gamma": 0.6, "delta": 0.8}),
    );
    let out = bin()
        .args(["gate", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(tmp.path().join("runs"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("WellPosedA"), "stdout: {stdout}");
    let run_dir = run_dir_of(&out);
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["subcommand"], "gate");
    let result: Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("result.json")).unwrap())
            .unwrap();
    assert_eq!(result["tag"], "WellPosedA");
}

#[test]
fn construct_q_reports_the_complete_market_measure() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "q.json", &json!({"tree": skewed_tree()}));
    let out = bin()
        .args(["construct-q", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(tmp.path().join("runs"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let result: Value = serde_json::from_str(
        &std::fs::read_to_string(run_dir_of(&out).join("result.json")).unwrap(),
    )
    .unwrap();
    let q_up = result["leaves"][0]["q"].as_f64().unwrap();
    assert!((q_up - 1.0 / 3.0).abs() <= 1e-8, "Q(up) = {q_up}");
    assert!(result["residual"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn malformed_json_exits_2_without_a_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("broken.json");
    std::fs::write(&config, "{ not json").unwrap();
    let runs = tmp.path().join("runs");
    let out = bin()
        .args(["gate", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(&runs)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!runs.exists(), "no run directory on validation failure");
}

#[test]
fn schema_violations_exit_2_with_a_field_message() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "gate.json",
        &json!({"alpha": 0.5, "beta": 0.9, "gamma": 0.6, "delta": 0.8, "bogus": true}),
    );
    let out = bin()
        .args(["gate", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bogus"), "stderr: {stderr}");
}

#[test]
fn unknown_subcommand_exits_64() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(64));
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn identical_configs_reproduce_bitwise_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "opt.json",
        &json!({
            "tree": skewed_tree(),
            "spec": {"family": "power", "alpha": 0.5, "beta": 0.9, "gamma": 0.6, "delta": 0.8},
            "z": 1.0,
            "seed": 99,
            "starts": 3,
            "budget": 6000,
        }),
    );
    let run = |dir: &str| {
        let out = bin()
            .args(["optimize", "--config"])
            .arg(&config)
            .arg("--out-dir")
            .arg(tmp.path().join(dir))
            .output()
            .unwrap();
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        run_dir_of(&out)
    };
    let (a, b) = (run("runs_a"), run("runs_b"));
    // identical config hash, identical numeric artifacts
    assert_eq!(a.file_name(), b.file_name());
    let result_a = std::fs::read(a.join("result.json")).unwrap();
    let result_b = std::fs::read(b.join("result.json")).unwrap();
    assert_eq!(result_a, result_b);
    let trace_a = std::fs::read(a.join("trace.csv")).unwrap();
    let trace_b = std::fs::read(b.join("trace.csv")).unwrap();
    assert_eq!(trace_a, trace_b);
}

#[test]
fn results_are_rederivable_from_the_manifest_config() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "eval.json",
        &json!({
            "tree": skewed_tree(),
            "spec": {"family": "power", "alpha": 0.5, "beta": 0.9, "gamma": 0.6, "delta": 0.8},
            "z": 1.0,
            "theta": {"constant": [1.5]},
        }),
    );
    let out = bin()
        .args(["evaluate", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(tmp.path().join("runs"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let run_dir = run_dir_of(&out);
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("manifest.json")).unwrap())
            .unwrap();
    let result: Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("result.json")).unwrap())
            .unwrap();

    // recompute through the library from the persisted config snapshot
    let snapshot = &manifest["config"];
    let z = snapshot["z"].as_f64().unwrap();
    let theta = snapshot["theta"]["constant"][0].as_f64().unwrap();
    let tree = cptree::fixtures::skewed_binomial();
    let spec = cptree::cpt::CptSpec::power(
        snapshot["spec"]["alpha"].as_f64().unwrap(),
        snapshot["spec"]["beta"].as_f64().unwrap(),
        snapshot["spec"]["gamma"].as_f64().unwrap(),
        snapshot["spec"]["delta"].as_f64().unwrap(),
    )
    .unwrap();
    let strategy = cptree::market::Strategy::constant(&tree, &[theta]).unwrap();
    let (v, v_plus, v_minus) =
        cptree::optimize::evaluate_strategy(&tree, &spec, z, &strategy).unwrap();
    assert_eq!(result["v"].as_f64().unwrap(), v);
    assert_eq!(result["v_plus"].as_f64().unwrap(), v_plus);
    assert_eq!(result["v_minus"].as_f64().unwrap(), v_minus);
}

#[test]
fn seed_flag_overrides_the_config_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "opt.json",
        &json!({
            "tree": skewed_tree(),
            "spec": {"family": "power", "alpha": 0.5, "beta": 0.9, "gamma": 0.6, "delta": 0.8},
            "z": 1.0,
            "seed": 1,
            "starts": 3,
            "budget": 6000,
        }),
    );
    let run = |extra: &[&str], dir: &str| {
        let out = bin()
            .args(["optimize", "--config"])
            .arg(&config)
            .arg("--out-dir")
            .arg(tmp.path().join(dir))
            .args(extra)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        run_dir_of(&out)
    };
    let base = run(&[], "runs_base");
    let overridden = run(&["--seed", "2"], "runs_override");
    // the seed participates in the run id, so the directories differ
    assert_ne!(base.file_name(), overridden.file_name());
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(overridden.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["config"]["seed"], 2);
}
