use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use stattrunc_cli::{run_experiment, ExperimentConfig, Row};

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stattrunc"))
}

fn run_config(name: &str) -> Vec<Row> {
    let cfg = ExperimentConfig::load(&configs_dir().join(name)).unwrap();
    let result = run_experiment(&cfg, false).unwrap();
    assert!(result.warnings.is_empty(), "{:?}", result.warnings);
    result.rows
}

fn r3(v: Option<f64>) -> f64 {
    (v.unwrap() * 1000.0).round() / 1000.0
}

#[test]
fn gm1_sweep_values() {
    let rows = run_config("gm1.toml");
    let a: Vec<usize> = rows.iter().map(|r| r.a).collect();
    assert_eq!(a, vec![1000, 5000, 10000]);
    let expected = [(130.147, 137.548), (133.167, 133.167), (133.167, 133.167)];
    for (row, (lo, hi)) in rows.iter().zip(expected) {
        assert!(row.is_ok());
        assert!((r3(row.lower) - lo).abs() <= 1.0001e-3, "a={} lower {:?}", row.a, row.lower);
        assert!((r3(row.upper) - hi).abs() <= 1.0001e-3, "a={} upper {:?}", row.a, row.upper);
    }
}

#[test]
fn random_walk_sweep_values() {
    for row in run_config("random_walk.toml") {
        let (lo, hi) = (row.lower.unwrap(), row.upper.unwrap());
        assert!((lo * 1e5).round() / 1e5 >= 0.74999);
        assert!((hi * 1e5).round() / 1e5 <= 0.75);
    }
}

#[test]
fn two_state_file_collapses() {
    let rows = run_config("two_state.toml");
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].lower, Some(1.0 / 3.0));
    assert_eq!(rows[0].upper, Some(1.0 / 3.0));
}

#[test]
fn reruns_match_in_bound_columns() {
    let a = run_config("gm1.toml");
    let b = run_config("gm1.toml");
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(Row { wall_time_seconds: 0.0, ..x.clone() }, Row { wall_time_seconds: 0.0, ..y.clone() });
    }
}

#[test]
fn binary_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("two.csv");
    let status = bin()
        .args(["run", configs_dir().join("two_state.toml").to_str().unwrap(), "--format", "csv", "--out"])
        .arg(&out)
        .arg("--validate")
        .status()
        .unwrap();
    assert!(status.success());
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("a,kappa_lower_r,kappa_lower_e,"));
    assert!(lines[1].contains("0.333333333333,0.333333333333,0.333333333333"), "{}", lines[1]);
    assert!(lines[1].contains("inside"), "{}", lines[1]);
}

#[test]
fn bad_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "model = \"gm1\"\nk_max = 50\na_values = [40]\n").unwrap();
    let out = bin().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("k_max"));

    let out = bin().arg("run").arg(dir.path().join("missing.toml")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn degenerate_sweep_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    // state 2 leaves A = {0, 1, 2} for sure, so it never reaches z inside A
    fs::write(
        dir.path().join("trap.txt"),
        "states 4\n0 1 1.0\n1 0 0.5\n1 2 0.5\n2 3 1.0\n3 1 1.0\n",
    )
    .unwrap();
    let cfg = dir.path().join("trap.toml");
    fs::write(
        &cfg,
        "model = \"file:trap.txt\"\nk_max = 2\na_values = [3]\nreward = \"identity\"\n\
         [certificate]\ng1 = [5.0]\ng2 = [5.0]\n",
    )
    .unwrap();
    let out = bin().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("degenerate_delta"), "{stdout}");
}

#[test]
fn json_output_parses_back() {
    let out = bin()
        .args(["run", configs_dir().join("two_state.toml").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    let rows: Vec<Row> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rows[0].a, 2);
    assert_eq!(rows[0].status, "ok");
}
