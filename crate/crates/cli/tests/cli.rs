//! Runs the `diffquant` binary on the shipped configs.

use std::path::PathBuf;
use std::process::{Command, Output};

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffquant")).args(args).env_remove("DIFFQUANT_THREADS").output().unwrap()
}

fn config(name: &str) -> String {
    configs_dir().join(name).to_string_lossy().into_owned()
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().unwrap_or("")).unwrap_or_else(|_| panic!("stderr is not JSON: {text}"))
}

#[test]
fn validate_accepts_every_shipped_config() {
    for name in
        ["lq.toml", "lq_finite.toml", "ou_ergodic.toml", "brownian_exit.toml", "controlled_exit.toml", "lq2d.toml"]
    {
        let out = run(&["validate", &config(name)]);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn unknown_criterion_is_a_config_error_naming_the_field() {
    let out = run(&["--config", &config("lq.toml"), "--criterion", "average", "eval", "--method", "pde"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["field"], "criterion.kind");
}

#[test]
fn usage_errors_exit_with_code_one() {
    let out = run(&["study", "sideways"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "usage");
}

#[test]
fn missing_config_is_a_config_error() {
    let out = run(&["eval"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["field"], "config");
}

#[test]
fn exit_study_prints_one_row_per_schedule_entry() {
    let out = run(&["--config", &config("controlled_exit.toml"), "study", "exit"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# diffquant study exit"));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let gap = header.iter().position(|h| *h == "gap").unwrap();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 5);
    for r in &rows {
        assert_eq!(r.len(), header.len());
        assert_eq!(r[0], "n");
        assert!(r[gap].parse::<f64>().unwrap() >= -1e-9);
    }
}

#[test]
fn criterion_override_without_the_model_fields_is_rejected() {
    let out = run(&["--config", &config("lq.toml"), "--criterion", "exit", "study", "discounted"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["field"], "model.exit");
}

#[test]
fn monte_carlo_eval_is_reproducible_for_a_fixed_seed() {
    let args = ["--config", &config("lq.toml"), "--seed", "11", "--format", "json", "eval", "--method", "mc"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["mc"]["seed"], 11);
}

#[test]
fn solve_writes_value_and_policy_files() {
    let dir = std::env::temp_dir().join(format!("diffquant-cli-solve-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    let out =
        run(&["--config", &config("brownian_exit.toml"), "--out-dir", dir.to_str().unwrap(), "solve", "--n", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["value.csv", "policy.json", "solve.json"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let _ = std::fs::remove_dir_all(&dir);
}
