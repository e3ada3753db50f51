//! End-to-end tests of the `risbr` binary: exit codes, error wording, file
//! outputs, and rerun determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_risbr"))
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

// Small system so each solve finishes in milliseconds: one antenna, two
// surviving BSs, two RIS elements, fixed five-round budget.
const TINY: &str = r#"{
    "system": {"n_antennas": 1, "surviving_bs": 2, "ris_elements": 2},
    "solver": {"max_outer_iterations": 5, "outer_tolerance": 0.0, "max_inner_iterations": 60},
    "experiment": {"trials": 1, "eta_grid": [0.5], "antenna_grid": [1, 2]}
}"#;

#[test]
fn malformed_config_exits_two_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "{ not json");
    let out = bin().args(["solve", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("line 1"), "missing position info: {err}");
}

#[test]
fn out_of_range_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"traffic": {"alpha": 2.0}}"#);
    let out = bin().args(["solve", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("traffic.alpha"), "field not named: {err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"system": {"n_antenas": 4}}"#);
    let out = bin().args(["solve", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("n_antenas"), "typo not surfaced: {err}");
}

#[test]
fn missing_config_file_exits_one() {
    let out = bin()
        .args(["solve", "--config", "/nonexistent/risbr.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_strategy_flag_exits_two() {
    let out = bin().args(["solve", "--strategy", "bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_thread_env_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = bin()
        .args(["solve", "--config"])
        .arg(&cfg)
        .env("RISBR_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("RISBR_THREADS"));
}

#[test]
fn solve_prints_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = bin()
        .args(["solve", "--seed", "7", "--config"])
        .arg(&cfg)
        .env("RISBR_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("selection:"));
    assert!(text.contains("survivability:"));
}

#[test]
fn solve_writes_full_trace_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out_dir in [&out_a, &out_b] {
        let out = bin()
            .args(["solve", "--seed", "3", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out_dir)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    }

    let text = fs::read_to_string(out_a.join("solve.json")).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    // outer_tolerance 0 disables early stopping: exactly the configured
    // five rounds appear, and wall time is not serialized.
    let trace = value["trace"].as_array().unwrap();
    assert_eq!(trace.len(), 5);
    assert_eq!(trace[0]["iteration"], 0);
    assert_eq!(trace[0]["delta"], 0.0);
    assert!(value.get("wall_time").is_none());
    assert_eq!(value["phases"].as_array().unwrap().len(), 2);
    assert!(out_a.join("solve_manifest.json").exists());

    let bytes_a = fs::read(out_a.join("solve.json")).unwrap();
    let bytes_b = fs::read(out_b.join("solve.json")).unwrap();
    assert_eq!(bytes_a, bytes_b);
}

#[test]
fn no_ris_flag_empties_phases() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out_dir = dir.path().join("out");
    let out = bin()
        .args(["solve", "--no-ris", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let text = fs::read_to_string(out_dir.join("solve.json")).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(value["phases"].as_array().unwrap().len(), 0);
}

#[test]
fn snapshot_emits_one_row_per_bs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out_dir = dir.path().join("out");
    let out = bin()
        .args(["snapshot", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let csv = fs::read_to_string(out_dir.join("snapshot.csv")).unwrap();
    // Header plus one row per surviving BS.
    assert_eq!(csv.lines().count(), 3);
    assert!(out_dir.join("snapshot_manifest.json").exists());

    // JSON export carries the same rows.
    let out = bin()
        .args(["snapshot", "--format", "json", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(out_dir.join("snapshot.json")).unwrap();
    let rows: Vec<serde_json::Value> = serde_json::from_str(&text).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0]["distance_m"].as_f64().unwrap() >= 100.0);
}

#[test]
fn antenna_sweep_row_count_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    // The manifest echoes the output directory, so byte comparisons must
    // rerun into the same path; the first run's bytes are kept in memory.
    let out_dir = dir.path().join("out");
    let mut first: Option<(Vec<u8>, Vec<u8>)> = None;
    for _ in 0..2 {
        let out = bin()
            .args(["sweep-antennas", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out_dir)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
        let csv = fs::read(out_dir.join("sweep_antennas.csv")).unwrap();
        let manifest = fs::read(out_dir.join("sweep_antennas_manifest.json")).unwrap();
        match &first {
            None => first = Some((csv, manifest)),
            Some((c, m)) => {
                assert_eq!(&csv, c, "csv differs between reruns");
                assert_eq!(&manifest, m, "manifest differs between reruns");
            }
        }
    }
    let csv = fs::read_to_string(out_dir.join("sweep_antennas.csv")).unwrap();
    // 2 antenna counts x 1 eta x RIS on/off, plus the header.
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn traffic_sweep_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out_dir = dir.path().join("out");
    let out = bin()
        .args(["sweep-traffic", "--strategy", "greedy", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let csv = fs::read_to_string(out_dir.join("sweep_traffic.csv")).unwrap();
    // 1 eta x 2 patterns x RIS on/off, plus the header.
    assert_eq!(csv.lines().count(), 5);
    // The manifest records the strategy override.
    let manifest = fs::read_to_string(out_dir.join("sweep_traffic_manifest.json")).unwrap();
    assert!(manifest.contains("\"strategy\": \"greedy\""));
}

#[test]
fn validate_reports_all_checks_passing() {
    let out = bin().args(["validate", "--seed", "5"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("PASS"));
    assert!(!text.contains("FAIL"));
    assert!(text.contains("surrogate-tightness"));
    assert!(text.contains("grid-comparison"));
}
