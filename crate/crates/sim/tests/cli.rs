use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_fedsurrogate");

const TINY: &[&str] = &[
    "--n-clients",
    "6",
    "--rounds",
    "2",
    "--set",
    "hidden=[8,4]",
    "--set",
    "dataset.train_per_class=40",
    "--set",
    "dataset.test_per_class=10",
];

fn run(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("FEDSURROGATE_OUT_DIR");
    if let Some(dir) = out_env {
        cmd.env("FEDSURROGATE_OUT_DIR", dir);
    }
    cmd.output().unwrap()
}

fn with_tiny<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(TINY).copied().collect()
}

#[test]
fn run_writes_csv_and_json_to_the_env_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&with_tiny(&["run", "--name", "t"]), Some(dir.path()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 + 1);
    assert!(dir.path().join("t.json").exists());
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 1);
}

#[test]
fn out_dir_flag_beats_the_environment() {
    let env_dir = tempfile::tempdir().unwrap();
    let flag_dir = tempfile::tempdir().unwrap();
    let flag = flag_dir.path().to_str().unwrap();
    let out = run(&with_tiny(&["run", "--format", "csv", "--out-dir", flag]), Some(env_dir.path()));
    assert!(out.status.success());
    assert!(flag_dir.path().join("run.csv").exists());
    assert!(!flag_dir.path().join("run.json").exists());
    assert!(!env_dir.path().join("run.csv").exists());
}

#[test]
fn config_file_and_overrides_compose() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    fs::write(&path, "rounds = 9\nseed = 3\n[filter]\nzeta = 0.1\n").unwrap();
    let file = path.to_str().unwrap();
    let out = run(&["config", "--config", file, "--rounds", "4", "--set", "zeta=0.25"], None);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = fedsurrogate_sim::ExperimentConfig::from_toml(&text).unwrap();
    assert_eq!((cfg.rounds, cfg.seed, cfg.filter.zeta), (4, 3, 0.25));
}

#[test]
fn validation_failures_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["run", "--mcr", "1.5"],
        vec!["run", "--set", "no_such=1"],
        vec!["run", "--set", "rounds=lots"],
        vec!["run", "--attack", "teleport"],
        vec!["sweep", "--param", "bogus", "--values", "1,2"],
    ] {
        let out = run(&args, Some(dir.path()));
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    }
    let bad_toml = dir.path().join("bad.toml");
    fs::write(&bad_toml, "roundz = 1\n").unwrap();
    let out = run(&["run", "--config", bad_toml.to_str().unwrap()], Some(dir.path()));
    assert_eq!(out.status.code(), Some(2));
    assert!(fs::read_dir(dir.path()).unwrap().all(|e| e.unwrap().path() == bad_toml));
}

#[test]
fn runtime_failures_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.toml");
    let out = run(&["run", "--config", missing.to_str().unwrap()], Some(dir.path()));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_and_ablate_write_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let out =
        run(&with_tiny(&["sweep", "--param", "zeta", "--values", "0.1,0.3", "--format", "csv"]), Some(dir.path()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("run_zeta_0.1.csv").exists());
    assert!(dir.path().join("run_zeta_0.3.csv").exists());
    let summary = fs::read_to_string(dir.path().join("run_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);

    let out = run(&with_tiny(&["ablate", "--name", "ab", "--format", "json"]), Some(dir.path()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for v in ["stage1_only", "no_rescue", "rescue_exclude", "full"] {
        assert!(dir.path().join(format!("ab_{v}.json")).exists(), "{v}");
    }
    assert_eq!(fs::read_to_string(dir.path().join("ab_summary.csv")).unwrap().lines().count(), 5);
}

#[test]
fn majority_warning_goes_to_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&with_tiny(&["run", "--mcr", "0.5"]), Some(dir.path()));
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning: 3 of 6 clients are malicious"));
}
