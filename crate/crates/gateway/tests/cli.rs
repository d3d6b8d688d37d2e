use std::path::Path;
use std::process::{Command, Output};

use ecoroute_core::eval::load_dataset;
use ecoroute_core::record::{read_log, EvalMode};
use ecoroute_gateway::config::ConfigRoot;
use serde_json::Value;

fn ecoroute(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecoroute"))
        .args(args)
        .current_dir(cwd)
        .env_remove("ECOROUTE_CONFIG")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn dataset_gen_writes_150_lines() {
    let dir = tempfile::tempdir().unwrap();
    let out = ecoroute(&["dataset", "gen", "--seed", "42", "--out", "d.jsonl"], dir.path());
    assert!(out.status.success(), "{}", text(&out.stderr));
    let raw = std::fs::read_to_string(dir.path().join("d.jsonl")).unwrap();
    assert_eq!(raw.lines().count(), 150);
    assert_eq!(load_dataset(&dir.path().join("d.jsonl")).unwrap().len(), 150);
}

#[test]
fn eval_both_against_mock_writes_report_and_log() {
    let dir = tempfile::tempdir().unwrap();
    assert!(ecoroute(&["dataset", "gen", "--seed", "7", "--out", "d.jsonl"], dir.path()).status.success());
    let out = ecoroute(
        &[
            "eval", "--dataset", "d.jsonl", "--mode", "both", "--mock", "--repetitions", "2", "--log",
            "run.jsonl", "--out", "out/report.json",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("baseline") && stdout.contains("adaptive"), "{stdout}");

    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    let energy = report["reductions"]["energy_pct"].as_f64().unwrap();
    assert!((energy - 61.96).abs() < 0.1, "energy reduction {energy}");
    assert!(dir.path().join("out/report.txt").exists());

    let records = read_log(&dir.path().join("run.jsonl")).unwrap();
    assert_eq!(records.len(), 600);
    assert_eq!(records.iter().filter(|r| r.mode == Some(EvalMode::Baseline)).count(), 300);
    assert!(records.iter().all(|r| r.item_id.is_some() && r.query_sha256.is_none()));

    // The same log regenerates the same reductions.
    let out = ecoroute(&["report", "--log", "run.jsonl", "--out", "again.json"], dir.path());
    assert!(out.status.success(), "{}", text(&out.stderr));
    let again: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("again.json")).unwrap()).unwrap();
    assert_eq!(again["reductions"], report["reductions"]);
}

#[test]
fn serve_without_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = ecoroute(&["serve", "--config", "missing/ecoroute.toml"], dir.path());
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("missing/ecoroute.toml"), "{}", text(&out.stderr));

    let out = ecoroute(&["serve"], dir.path());
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("config/ecoroute.toml"), "{}", text(&out.stderr));
}

#[test]
fn env_var_selects_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[cache]\ncapacity = 0\n").unwrap();
    assert!(ecoroute(&["dataset", "gen", "--out", "d.jsonl"], dir.path()).status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_ecoroute"))
        .args(["eval", "--dataset", "d.jsonl", "--mock", "--repetitions", "1"])
        .current_dir(dir.path())
        .env("ECOROUTE_CONFIG", "bad.toml")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("cache"), "{}", text(&out.stderr));
}

#[test]
fn unknown_flag_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = ecoroute(&["eval", "--bogus"], dir.path());
    assert!(!out.status.success());
    assert!(text(&out.stderr).to_lowercase().contains("usage"), "{}", text(&out.stderr));
}

#[test]
fn report_on_missing_log_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = ecoroute(&["report", "--log", "nope.jsonl", "--out", "r.json"], dir.path());
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("nope.jsonl"), "{}", text(&out.stderr));
}

#[test]
fn shipped_config_loads() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/ecoroute.toml");
    let cfg = ConfigRoot::load(&path).unwrap();
    assert!(cfg.rules_path.unwrap().is_file());
    assert!(cfg.seeds_path.unwrap().is_file());
    assert_eq!(cfg.cache.ttl_seconds, 300.0);
}
