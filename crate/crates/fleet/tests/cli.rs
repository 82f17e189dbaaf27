use std::path::Path;
use std::process::{Command, Output};

use fleetnav::cli::METRICS_HEADER;
use fleetnav::config::RunManifest;
use fleetnav_core::eval::parse_table;
use fleetnav_core::policy::PolicySnapshot;

fn fleetnav(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fleetnav"));
    cmd.args(args);
    for (k, _) in std::env::vars() {
        if k.starts_with("FLEETNAV_") {
            cmd.env_remove(k);
        }
    }
    cmd.envs(envs.iter().copied());
    cmd.output().unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\n{}", o.status, String::from_utf8_lossy(&o.stderr));
}

/// Small networks so a CLI run takes seconds.
fn small_config(dir: &Path) -> String {
    let p = dir.join("small.json");
    let cfg = serde_json::json!({"train": {"sac": {"hidden": [16, 16], "batch_size": 32, "warmup_steps": 200}}});
    std::fs::write(&p, cfg.to_string()).unwrap();
    p.display().to_string()
}

fn rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn pretrain_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = |n: &str| dir.path().join(n).display().to_string();
    for run in ["a", "b"] {
        ok(&fleetnav(&["--config", &cfg, "pretrain", "--episodes", "100", "--seed", "1", "--out", &out(run)], &[]));
    }
    let a = std::fs::read(dir.path().join("a/metrics.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/metrics.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().next(), Some(METRICS_HEADER));
    assert_eq!(text.lines().count(), 101);
    assert_eq!(std::fs::read(dir.path().join("a/policy.bin")).unwrap(), std::fs::read(dir.path().join("b/policy.bin")).unwrap());
    PolicySnapshot::from_bytes(&std::fs::read(dir.path().join("a/policy.bin")).unwrap()).unwrap();

    let m: RunManifest = serde_json::from_slice(&std::fs::read(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(m.command, "pretrain");
    assert_eq!(m.seeds, vec![1]);
    assert_eq!(m.config["train"]["episodes"], 100);
    assert_eq!(m.config["train"]["sac"]["hidden"], serde_json::json!([16, 16]));
    assert!(m.argv.iter().any(|a| a == "--episodes"));
}

#[test]
fn flags_beat_env_beats_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"train": {"episodes": 4, "sac": {"hidden": [8], "batch_size": 8, "warmup_steps": 50}}}"#).unwrap();
    let cfg = cfg.display().to_string();
    let out = dir.path().join("o").display().to_string();
    let metrics = dir.path().join("o/metrics.csv");

    ok(&fleetnav(&["--config", &cfg, "pretrain", "--out", &out], &[]));
    assert_eq!(rows(&metrics), 4);
    ok(&fleetnav(&["--config", &cfg, "pretrain", "--out", &out], &[("FLEETNAV_EPISODES", "3")]));
    assert_eq!(rows(&metrics), 3);
    ok(&fleetnav(&["--config", &cfg, "pretrain", "--out", &out, "--episodes", "2"], &[("FLEETNAV_EPISODES", "3")]));
    assert_eq!(rows(&metrics), 2);
    // the config file can come from the environment too
    ok(&fleetnav(&["pretrain", "--out", &out], &[("FLEETNAV_CONFIG", &cfg)]));
    assert_eq!(rows(&metrics), 4);
}

#[test]
fn usage_errors_exit_2() {
    let o = fleetnav(&["pretrain", "--bogus"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(fleetnav(&["no-such-command"], &[]).status.code(), Some(2));
    assert_eq!(fleetnav(&["--help"], &[]).status.code(), Some(0));
}

#[test]
fn bad_config_reports_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"train": {"sac": {"batch_size": "lots"}}}"#).unwrap();
    let o = fleetnav(&["--config", cfg.to_str().unwrap(), "pretrain", "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.sac.batch_size"));
    let o = fleetnav(&["eval", "--suite", "moon", "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gen_env_writes_layouts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    ok(&fleetnav(&["gen-env", "--suite", "light-clutter", "--count", "5", "--seed", "3", "--out", out.to_str().unwrap()], &[]));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("layouts.json")).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 5);
    assert!(out.join("manifest.json").exists());
}

#[test]
fn eval_prints_and_writes_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e");
    let o = fleetnav(&["eval", "--policy", "unicycle", "--suite", "empty-room", "--trials", "2", "--layouts", "3", "--out", out.to_str().unwrap()], &[]);
    ok(&o);
    let printed = parse_table(&String::from_utf8_lossy(&o.stdout)).unwrap();
    let written = parse_table(&std::fs::read_to_string(out.join("report.txt")).unwrap()).unwrap();
    assert_eq!(printed, written);
    assert_eq!(printed.len(), 1);
    assert!(printed[0].sr >= 50.0, "unicycle in an empty room: {printed:?}");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["episodes"], 6);
}
