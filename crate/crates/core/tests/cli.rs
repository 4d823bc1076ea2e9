mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ergodic-bsde"))
}

/// Copies a shipped config into `dir` after applying `edit`.
fn edited(dir: &Path, name: &str, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(common::config_path(name)).unwrap()).unwrap();
    edit(&mut v);
    let path = dir.join(format!("{name}-edited.json"));
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin().arg(cmd).arg("--config").arg(config).arg("--out").arg(out).args(extra).output().unwrap()
}

fn error_json(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("error.json")).unwrap()).unwrap()
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = bin().arg("solve-ergodic").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_rate_matrix_names_the_offending_row() {
    let dir = TempDir::new().unwrap();
    let cfg = edited(dir.path(), "two_regime", |v| v["model"]["rates"] = json!([[-0.5, 0.4], [0.3, -0.3]]));
    let out = dir.path().join("out");
    let o = run("solve-ergodic", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["kind"], "model_validation");
    assert_eq!(err["path"], "model.rates[0]");
}

#[test]
fn unknown_field_is_reported_with_its_path() {
    let dir = TempDir::new().unwrap();
    let cfg = edited(dir.path(), "example1", |v| v["grid"]["spacing"] = json!(0.1));
    let out = dir.path().join("out");
    assert_eq!(run("solve-ergodic", &cfg, &out, &[]).status.code(), Some(2));
    assert!(error_json(&out)["path"].as_str().unwrap().starts_with("grid"));
}

#[test]
fn step_budget_exhaustion_is_non_convergence() {
    let dir = TempDir::new().unwrap();
    let cfg = edited(dir.path(), "example2", |v| v["scheme"]["max_steps"] = json!(5));
    let out = dir.path().join("out");
    assert_eq!(run("solve-ergodic", &cfg, &out, &[]).status.code(), Some(3));
    let err = error_json(&out);
    assert_eq!(err["kind"], "non_convergence");
    assert!(err["residual"].as_f64().unwrap() > 0.0);
}

#[test]
fn starting_at_the_ergodic_profile_gives_a_degenerate_fit() {
    let dir = TempDir::new().unwrap();
    let cfg = edited(dir.path(), "example2", |v| v["large_time"]["initial"] = json!("ergodic"));
    let out = dir.path().join("out");
    assert_eq!(run("large-time", &cfg, &out, &[]).status.code(), Some(4));
    assert_eq!(error_json(&out)["kind"], "degenerate_fit");
    // The residual table is still written.
    assert!(out.join("large_time.csv").exists());
}

#[test]
fn missing_ergodic_input_without_inline_solve_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = edited(dir.path(), "merton", |v| v["large_time"]["inline_ergodic"] = json!(false));
    let out = dir.path().join("out");
    assert_eq!(run("growth-rate", &cfg, &out, &[]).status.code(), Some(2));
    assert_eq!(error_json(&out)["path"], "outputs.ergodic_input");

    let cfg = edited(dir.path(), "merton", |v| {
        v["outputs"] = json!({"ergodic_input": dir.path().join("nope.csv").to_str().unwrap()})
    });
    assert_eq!(run("growth-rate", &cfg, &out, &[]).status.code(), Some(2));
}

fn small_merton(dir: &Path, n_paths: usize) -> PathBuf {
    edited(dir, "merton", |v| {
        v["mc"]["n_paths"] = json!(n_paths);
        v["mc"]["horizon"] = json!(4.0);
        v["mc"]["n_steps"] = json!(40);
        v["mc"]["record_every"] = json!(10);
    })
}

#[test]
fn strict_turns_undersized_samples_into_exit_5() {
    let dir = TempDir::new().unwrap();
    let cfg = small_merton(dir.path(), 200);
    let out = dir.path().join("out");
    assert_eq!(run("simulate", &cfg, &out, &[]).status.code(), Some(0));
    assert_eq!(run("simulate", &cfg, &out, &["--strict"]).status.code(), Some(5));
    let err = error_json(&out);
    assert_eq!(err["kind"], "strict_warnings");
    assert!(err["warnings"].to_string().contains("UNDERSIZED_SAMPLE"));
}

#[test]
fn reruns_with_the_same_seed_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = small_merton(dir.path(), 1000);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert!(run("simulate", &cfg, &a, &["--seed", "5", "--threads", "1"]).status.success());
    assert!(run("simulate", &cfg, &b, &["--seed", "5", "--threads", "2"]).status.success());
    assert!(run("simulate", &cfg, &c, &["--seed", "6"]).status.success());
    let read = |d: &Path| fs::read(d.join("simulation_summary.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    let text = String::from_utf8(read(&a)).unwrap();
    assert!(text.lines().any(|l| l == "# seed=5"));
}

#[test]
fn solve_ergodic_writes_profile_trace_and_diagnostics() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = run("solve-ergodic", &common::config_path("example2"), &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["ergodic_profile.csv", "lambda_trace.csv", "diagnostics.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let diag: Value = serde_json::from_str(&fs::read_to_string(out.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["result"]["all_bounds_hold"], true);
    assert_eq!(diag["metadata"]["config_sha256"].as_str().unwrap().len(), 64);

    // The profile feeds a later command through outputs.ergodic_input.
    let profile = out.join("ergodic_profile.csv");
    let cfg = edited(dir.path(), "example2", |v| {
        v["outputs"] = json!({"ergodic_input": profile.to_str().unwrap()});
        v["large_time"]["inline_ergodic"] = json!(false);
    });
    let lt = dir.path().join("lt");
    let o = run("large-time", &cfg, &lt, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(lt.join("fit.json").exists());
}

#[test]
fn compare_writes_a_verdict_table() {
    let dir = TempDir::new().unwrap();
    let cfg = edited(dir.path(), "two_regime", |v| {
        v["comparison"]["instances"] = json!(3);
        v["comparison"]["broken_instances"] = json!(1);
        v["comparison"]["n"] = json!(41);
    });
    let out = dir.path().join("out");
    let o = run("compare", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "instance_id,seed,verdict,max_violation");
    assert_eq!(rows.len(), 5);
    assert!(rows[4].contains("HYPOTHESIS_FAILED(iii)"));
}
