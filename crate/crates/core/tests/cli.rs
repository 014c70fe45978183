use std::fs;
use std::process::{Command, Output};

fn mvsde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvsde")).args(args).output().unwrap()
}

#[test]
fn selftest_exits_zero() {
    let out = mvsde(&["selftest"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok      refinement_coupling"));
}

#[test]
fn syntax_error_reports_line_and_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "config_version = 1\n[model]\nfamily = = 3\n").unwrap();
    let out = mvsde(&["simulate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn failed_verdict_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("probe.toml");
    fs::write(
        &path,
        "config_version = 1\n[model]\nfamily = \"cubic-repulsive\"\n[probe]\nset = \"one-sided-lipschitz\"\ncount = 200\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = mvsde(&["probe-assumptions", path.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out_dir.read_dir().unwrap().count() >= 2);
}

#[test]
fn simulate_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sim.toml");
    fs::write(
        &path,
        "config_version = 1\n[model]\nfamily = \"cubic-mean-field\"\n[grid]\nT = 0.5\nn = 8\n[ensemble]\nN = 8\n[run]\nname = \"s\"\n",
    )
    .unwrap();
    let out_dir = dir.path().join("o");
    let out = mvsde(&["simulate", path.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--seed", "5"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let moments = fs::read_to_string(out_dir.join("s_moments.csv")).unwrap();
    assert!(moments.starts_with("step,t,moment,w2_to_origin\n"));
    assert_eq!(moments.lines().count(), 1 + 5);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("s_report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["run"]["seed"], 5);
}
