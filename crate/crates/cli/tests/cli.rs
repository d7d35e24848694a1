use std::fs;
use std::process::{Command, Output};

use cogradar::harness::{ExperimentConfig, METRICS_COLUMNS, RECORD_COLUMNS};

fn cogradar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cogradar")).args(args).output().expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

const TINY: &str = r#"
name = "tiny"
policies = ["pomcp", "oracle"]
n_trials = 2
base_seed = 4
t_max = 4
threads = 1

[array]
n_tx = 12
n_rx = 12
total_power = 1.0

[grid]
n_bins = 24

[scenario]
initial_state = [60.0, 0.2, -60.0, 0.2]
sigma_s = 0.03
initial_snr_db = 0.0

[pomcp]
n_sim = 40
n_particles = 60
"#;

#[test]
fn preset_dump_round_trips() {
    let out = cogradar(&["case1", "--dump-config"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let cfg = ExperimentConfig::from_toml_str(&text(&out.stdout)).unwrap();
    assert_eq!(cfg, ExperimentConfig::case1());

    let out = cogradar(&["case2", "--desk", "--trials", "3", "--dump-config"]);
    let cfg = ExperimentConfig::from_toml_str(&text(&out.stdout)).unwrap();
    assert_eq!(cfg.n_trials, 3);
    assert_eq!(cfg.pomcp.n_sim, 2000);
    assert_eq!(cfg.scenario.initial_state, ExperimentConfig::case2().scenario.initial_state);
}

#[test]
fn validate_accepts_a_dumped_preset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("case2.toml");
    fs::write(&path, ExperimentConfig::case2().to_toml_string()).unwrap();
    let out = cogradar(&["validate-config", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("ok"));
}

#[test]
fn validate_rejects_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = dir.path().join("unknown.toml");
    fs::write(&unknown, format!("{TINY}\nmystery = 1\n")).unwrap();
    let out = cogradar(&["validate-config", unknown.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("mystery"), "{}", text(&out.stderr));

    let invalid = dir.path().join("invalid.toml");
    fs::write(&invalid, TINY.replace("n_trials = 2", "n_trials = 0")).unwrap();
    assert!(!cogradar(&["validate-config", invalid.to_str().unwrap()]).status.success());

    let missing = dir.path().join("missing.toml");
    let out = cogradar(&["validate-config", missing.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).starts_with("error:"));
}

#[test]
fn unknown_policy_is_an_error() {
    let out = cogradar(&["case1", "--policy", "greedy", "--dump-config"]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("greedy"));
}

#[test]
fn run_writes_the_result_tables() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    fs::write(&config, TINY).unwrap();
    let out_dir = dir.path().join("out");
    let out = cogradar(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--policy",
        "pomcp,pf",
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("pomcp") && stdout.contains("particle_filter"), "{stdout}");

    let records = fs::read_to_string(out_dir.join("records.csv")).unwrap();
    let mut lines = records.lines();
    assert_eq!(lines.next().unwrap(), RECORD_COLUMNS.join(","));
    // 2 policies x 2 trials x 4 steps
    assert_eq!(lines.count(), 16);
    let metrics = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), METRICS_COLUMNS.join(","));
    assert_eq!(metrics.lines().count(), 1 + 2 * 4);
    assert!(out_dir.join("trials.csv").exists());
    assert!(out_dir.join("metadata.json").exists());
}
