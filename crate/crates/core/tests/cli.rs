use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fredholm(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fredholm"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("FREDHOLM_OUT_DIR")
        .env_remove("FREDHOLM_THREADS")
        .output()
        .expect("binary runs")
}

fn manifest(dir: &Path, command: &str) -> Value {
    let text = fs::read_to_string(dir.join(format!("{command}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn data_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn factorize_bm_is_exact_at_n_512() {
    let dir = tempfile::tempdir().unwrap();
    let out = fredholm(dir.path(), &["factorize", "--model", "bm", "--T", "1", "--n", "512"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(dir.path(), "factorize");
    assert!(m["residual"]["absolute"].as_f64().unwrap() <= 1e-10);
    assert_eq!(m["tolerances"]["residual"].as_f64(), Some(1e-10));
    assert_eq!(m["pass"], Value::Bool(true));
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert!(dir.path().join("kernel.csv").exists());
    assert!(dir.path().join("kernel.json").exists());
}

#[test]
fn factorize_rank_one_has_rank_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = fredholm(dir.path(), &["factorize", "--model", "rank-one:f=t", "--T", "2"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(manifest(dir.path(), "factorize")["rank"].as_u64(), Some(1));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = fredholm(dir.path(), &["factorize"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("Usage: fredholm factorize"));
    assert_eq!(fredholm(dir.path(), &["factorize", "--model", "bm", "--n", "x"]).status.code(), Some(1));
    assert_eq!(fredholm(dir.path(), &["factorize", "--model", "fbm:H=1.5"]).status.code(), Some(2));
    let strict = fredholm(dir.path(), &["factorize", "--model", "bm", "--n", "64", "--set", "tol_residual=0"]);
    assert_eq!(strict.status.code(), Some(3));
    assert_eq!(manifest(dir.path(), "factorize")["pass"], Value::Bool(false));
}

#[test]
fn growth_violation_is_a_precondition_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = fredholm(dir.path(), &["ito-check", "--model", "bm", "--f", "gauss:a=0.3", "--paths", "100"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grows faster"));
}

#[test]
fn ito_check_example() {
    let dir = tempfile::tempdir().unwrap();
    let out = fredholm(
        dir.path(),
        &["ito-check", "--model", "bm", "--f", "x2", "--t", "0.5", "--G", "xT2", "--paths", "1000000", "--seed", "42"],
    );
    assert_eq!(out.status.code(), Some(0));
    let r = &manifest(dir.path(), "ito-check")["report"];
    for side in ["lhs_mean", "rhs_mean"] {
        assert!((r[side].as_f64().unwrap() - 0.5).abs() < 0.01, "{side} = {}", r[side]);
    }
}

#[test]
fn bridge_example() {
    let dir = tempfile::tempdir().unwrap();
    let out = fredholm(dir.path(), &["bridge", "--model", "bm", "--g", "const", "--method", "both", "--paths", "100000"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(manifest(dir.path(), "bridge")["pass"], Value::Bool(true));
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["simulate", "--model", "ou:theta=2,sigma=1", "--n", "64", "--paths", "5000", "--seed", "9"];
    assert_eq!(fredholm(a.path(), &args).status.code(), Some(0));
    assert_eq!(fredholm(b.path(), &args).status.code(), Some(0));
    assert_eq!(data_files(a.path()), data_files(b.path()));
}

#[test]
fn config_file_and_print_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "model = bb\nn = 32\nseed = 3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fredholm"))
        .args(["simulate", "--print-config", "--n", "16", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("model = bb\n"));
    assert!(text.contains("n = 16\n"));
    assert!(text.contains("seed = 3\n"));
}
