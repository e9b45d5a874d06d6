mod common;

use std::path::Path;

use common::*;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_dataset(dir: &Path, seed: &str) {
    run_cli_ok(&[
        "generate",
        "--seed",
        seed,
        "--out",
        s(dir),
        "--m",
        "31",
        "--defect-free",
        "40",
        "--crater",
        "6",
        "--dirt",
        "14",
    ]);
}

fn stderr_json(out: &std::process::Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str(line).expect("error line is JSON")
}

#[test]
fn missing_seed_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_cli(&["generate", "--out", s(&tmp.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "usage");
    assert_eq!(err["exit_code"], 2);
    assert!(!tmp.path().join("d").exists());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(run_cli(&["evaluate", "--bogus"]).status.code(), Some(2));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_cli(&[
        "extract",
        "--dataset",
        s(&tmp.path().join("nowhere")),
        "--out",
        s(&tmp.path().join("f.csv")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["error"], "data");
}

#[test]
fn extract_twice_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_dataset(&data, "5");
    let (a, b) = (tmp.path().join("a.csv"), tmp.path().join("b.csv"));
    run_cli_ok(&["extract", "--dataset", s(&data), "--out", s(&a)]);
    run_cli_ok(&["extract", "--dataset", s(&data), "--out", s(&b), "--threads", "1"]);
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert_eq!(String::from_utf8(bytes).unwrap().lines().count(), 1 + 60);
}

#[test]
fn classify_against_itself_matches_every_query() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_dataset(&data, "6");
    let feats = tmp.path().join("f.csv");
    run_cli_ok(&["extract", "--dataset", s(&data), "--out", s(&feats)]);
    let post = tmp.path().join("post.csv");
    let out = run_cli_ok(&[
        "classify",
        "--reference",
        s(&feats),
        "--query",
        s(&feats),
        "--out",
        s(&post),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("accuracy 1.000000"), "{stdout}");
    assert_eq!(std::fs::read_to_string(&post).unwrap().lines().count(), 1 + 60);
}

#[test]
fn evaluate_report_validates_against_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_dataset(&data, "7");
    let report_dir = tmp.path().join("report");
    run_cli_ok(&[
        "evaluate",
        "--dataset",
        s(&data),
        "--seed",
        "3",
        "--runs",
        "4",
        "--out",
        s(&report_dir),
    ]);
    let json = std::fs::read_to_string(report_dir.join("report.json")).unwrap();
    let errors = report_schema_errors(&json);
    assert!(errors.is_empty(), "{errors:?}");
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["n_runs"], 4);
    assert_eq!(v["train_fraction"], 0.7);
    assert!(report_dir.join("features.csv").is_file());
    assert!(report_dir.join("report.csv").is_file());

    // Single run: standard errors are null and the schema still holds.
    let single = tmp.path().join("single");
    run_cli_ok(&[
        "evaluate",
        "--features",
        s(&report_dir.join("features.csv")),
        "--seed",
        "3",
        "--runs",
        "1",
        "--out",
        s(&single),
    ]);
    let json = std::fs::read_to_string(single.join("report.json")).unwrap();
    assert!(report_schema_errors(&json).is_empty());
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["se_available"], false);
    assert!(v["metrics"]["mer"]["se"].is_null());
}

#[test]
fn schema_rejects_a_malformed_report() {
    let bad = r#"{"n_runs": 0, "metrics": {}}"#;
    assert!(!report_schema_errors(bad).is_empty());
}

#[test]
fn config_file_supplies_flags_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("gen.cfg");
    std::fs::write(&cfg, "seed = 9\nm = 31\ndefect-free = 4\ncrater = 2\ndirt = 0\n").unwrap();
    let data = tmp.path().join("data");
    run_cli_ok(&["generate", "--config", s(&cfg), "--out", s(&data), "--crater", "3"]);
    let manifest = std::fs::read_to_string(data.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 7);
    assert_eq!(manifest.lines().filter(|l| l.contains(",crater,")).count(), 3);
}
