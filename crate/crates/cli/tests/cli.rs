use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use autohall::detect::DetectionRecord;
use autohall::records::read_records;

fn e2e() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/e2e")
}

fn autohall(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_autohall")).args(args).env_remove("AUTOHALL_CACHE_DIR").output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(out: &Path, extra: &[&str]) -> Output {
    let claims = e2e().join("claims.jsonl");
    let script = e2e().join("script.jsonl");
    let mut args = vec![
        "generate",
        "--dataset",
        "climate-fever",
        "--in",
        s(&claims),
        "--temp",
        "0.1",
        "--seed",
        "7",
        "--backend",
        "scripted",
        "--script",
        s(&script),
        "--out",
        s(out),
    ];
    args.extend(extra);
    autohall(&args)
}

fn detect_script(dir: &Path) -> PathBuf {
    let path = dir.join("detect.script");
    let lines = [
        r#"{"match":{"purpose":"sampling"},"reply":"Another source with details."}"#,
        r#"{"match":{"purpose":"contradiction","claim_id":"c01","sample_index":2},"reply":"Yes"}"#,
        r#"{"match":{"purpose":"contradiction"},"reply":"No"}"#,
    ];
    std::fs::write(&path, lines.join("\n")).unwrap();
    path
}

#[test]
fn version_flag() {
    let out = autohall(&["--version"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn out_of_range_temperature_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = generate(dir.path(), &["--temp", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_method_is_usage_error() {
    let out = autohall(&["detect", "--method", "mqag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn count_mismatch_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = generate(dir.path(), &["--expected-counts", "654,253"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error["));
}

#[test]
fn missing_script_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let claims = e2e().join("claims.jsonl");
    let out = autohall(&[
        "generate",
        "--dataset",
        "climate-fever",
        "--in",
        s(&claims),
        "--backend",
        "scripted",
        "--script",
        "/nonexistent/script",
        "--out",
        s(dir.path()),
    ]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn detect_then_ablate() {
    let dir = tempfile::tempdir().unwrap();
    assert!(generate(dir.path(), &[]).status.success());
    let dataset = dir.path().join("dataset.balanced");
    let script = detect_script(dir.path());

    let out = autohall(&[
        "detect",
        "--dataset",
        s(&dataset),
        "--method",
        "ours",
        "--k",
        "13",
        "--backend",
        "scripted",
        "--script",
        s(&script),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let pred = dir.path().join("ours.detect");
    let records: Vec<DetectionRecord> = read_records(&pred).unwrap();
    assert_eq!(records.len(), 14);
    for r in &records {
        assert_eq!(r.k, 13);
        assert_eq!(r.verdict_flags().unwrap().len(), 13);
        assert_eq!(r.predicted, r.claim_id == "c01");
    }

    let reports = dir.path().join("reports");
    let out = autohall(&["ablate", "--pred", s(&pred), "--gold", s(&dataset), "--kmax", "13", "--out", s(&reports)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(reports.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 14);
}

#[test]
fn unigram_baseline_without_original() {
    let dir = tempfile::tempdir().unwrap();
    assert!(generate(dir.path(), &[]).status.success());
    let dataset = dir.path().join("dataset.balanced");
    let script = detect_script(dir.path());
    let out = autohall(&[
        "detect",
        "--dataset",
        s(&dataset),
        "--method",
        "selfck-1gm",
        "--k",
        "3",
        "--include-original=false",
        "--backend",
        "scripted",
        "--script",
        s(&script),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let records: Vec<DetectionRecord> = read_records(&dir.path().join("selfck-1gm.detect")).unwrap();
    assert_eq!(records.len(), 14);
    assert!(records.iter().all(|r| r.score.is_some() && r.k == 3));
}
