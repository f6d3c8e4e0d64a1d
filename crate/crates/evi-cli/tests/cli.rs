//! Behavioral tests for the `evi` binary: query answers, artifact layout,
//! output formats, and the exit-code contract (1 = bad input, 2 = the
//! numbers refused, 3 = the filesystem refused).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn evi() -> Command {
    Command::new(env!("CARGO_BIN_EXE_evi"))
}

fn model_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../models")
        .join(name)
}

fn stdout_of(output: &Output) -> &str {
    std::str::from_utf8(&output.stdout).expect("stdout is UTF-8")
}

fn stderr_of(output: &Output) -> &str {
    std::str::from_utf8(&output.stderr).expect("stderr is UTF-8")
}

#[test]
fn toy_evidence_query_reports_the_known_value() {
    let output = evi()
        .args(["--model"])
        .arg(model_path("toy_two_decision.json"))
        .args(["--evidence", "perfect:x1", "--format", "csv"])
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));

    let body = stdout_of(&output);
    let mut lines = body.lines();
    assert_eq!(
        lines.next(),
        Some("label,evi,preposterior_mean,preposterior_sd,method")
    );
    let row = lines.next().expect("one data row");
    assert_eq!(lines.next(), None, "exactly one query row");
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields[0], "perfect:x1");
    let evi: f64 = fields[1].parse().unwrap();
    // the toy decisions are exactly linear, so the answer is seed-independent
    assert!((evi - 0.3509353312047147).abs() < 1e-9, "evi = {evi}");
    assert_eq!(fields[4], "closed-form");
}

#[test]
fn default_queries_cover_every_variable_once() {
    let dir = tempfile::tempdir().unwrap();
    let output = evi()
        .args(["--model"])
        .arg(model_path("demo_evacuation.json"))
        .args(["--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));

    let plot = std::fs::read_to_string(dir.path().join("plot.csv")).unwrap();
    let lines: Vec<&str> = plot.lines().collect();
    assert_eq!(lines[0], "label,evi,preposterior_sd");
    assert_eq!(lines.len(), 10, "header + one row per uncertainty");
    let mut labels: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap())
        .collect();
    labels.sort_unstable();
    labels.dedup();
    assert_eq!(labels.len(), 9, "no variable repeated or missing");

    // plot rows are ranked by EVI, descending
    let values: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(values.windows(2).all(|w| w[0] >= w[1]), "{values:?}");

    let report = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(json["star"], "phased_mixed");
    assert_eq!(json["queries"].as_array().unwrap().len(), 9);
}

#[test]
fn json_format_streams_the_report_to_stdout() {
    let output = evi()
        .args(["--model"])
        .arg(model_path("toy_two_decision.json"))
        .args(["--format", "json"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let json: serde_json::Value = serde_json::from_str(stdout_of(&output)).unwrap();
    assert_eq!(json["star"], "d1");
    assert_eq!(json["plus"], "d2");
    assert!(stderr_of(&output).contains("completed in"));
}

#[test]
fn oracle_mode_writes_cross_check_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let output = evi()
        .args(["--model"])
        .arg(model_path("toy_two_decision.json"))
        .args(["--samples", "2000", "--oracle", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr_of(&output));

    let additivity = std::fs::read_to_string(dir.path().join("additivity.csv")).unwrap();
    let lines: Vec<&str> = additivity.lines().collect();
    assert_eq!(lines[0], "variable,evi_engine,evi_oracle,oracle_se");
    assert_eq!(lines.len(), 4, "x1, sum, all");

    let oracle: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("oracle.json")).unwrap())
            .unwrap();
    assert_eq!(oracle["method"], "nested-mc");
    assert_eq!(oracle["settings"]["outer"], 200);
    assert!(oracle["value"].as_f64().unwrap() > 0.0);
    assert!(oracle["cost"].as_u64().unwrap() > 0);
}

#[test]
fn oracle_mode_requires_an_output_directory() {
    let output = evi()
        .args(["--model"])
        .arg(model_path("toy_two_decision.json"))
        .args(["--oracle"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn quadrature_check_appends_matching_rows() {
    let output = evi()
        .args(["--model"])
        .arg(model_path("toy_two_decision.json"))
        .args(["--evidence", "rim:x1=4", "--quadrature-check", "--format", "csv"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let body = stdout_of(&output);
    let rows: Vec<&str> = body.lines().skip(1).collect();
    assert_eq!(rows.len(), 2, "closed form + quadrature");
    assert!(rows[0].ends_with(",closed-form"));
    assert!(rows[1].ends_with(",quadrature"));
    let value = |row: &str| row.split(',').nth(1).unwrap().parse::<f64>().unwrap();
    assert!((value(rows[0]) - value(rows[1])).abs() < 1e-6);
    // no disagreement warning expected
    assert!(!stderr_of(&output).contains("warning"));
}

#[test]
fn malformed_model_exits_one_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("broken.json");
    std::fs::write(&model, "{ \"variables\": [ } ").unwrap();
    let out_dir = dir.path().join("out");
    let output = evi()
        .args(["--model"])
        .arg(&model)
        .args(["--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr_of(&output).contains("error:"));
    assert!(!out_dir.exists(), "failed runs must not leave artifacts");
}

#[test]
fn invalid_evidence_exits_one() {
    for bad in ["bogus:x1", "perfect:ghost", "rim:x1=0.5", "perfect:x1;rim:x1=2"] {
        let output = evi()
            .args(["--model"])
            .arg(model_path("toy_two_decision.json"))
            .args(["--evidence", bad])
            .output()
            .unwrap();
        assert_eq!(output.status.code(), Some(1), "evidence '{bad}'");
    }
}

#[test]
fn degenerate_regression_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("degenerate.json");
    // the second variable collapses to a constant column (sd underflows),
    // which leaves the regression without a unique solution
    std::fs::write(
        &model,
        r#"{
            "variables": [
                { "name": "x1", "distribution": { "type": "normal", "mean": 0.0, "sd": 1.0 } },
                { "name": "x2", "distribution": { "type": "normal", "mean": 1.0, "sd": 1e-300 } }
            ],
            "decisions": [
                { "name": "d1", "value": "x1 + x2" },
                { "name": "d2", "value": "0.5" }
            ]
        }"#,
    )
    .unwrap();
    let output = evi().args(["--model"]).arg(&model).output().unwrap();
    assert_eq!(output.status.code(), Some(2), "stderr: {}", stderr_of(&output));
    assert!(stderr_of(&output).contains("error:"));
}

#[test]
fn unreadable_model_and_unwritable_output_exit_three() {
    let missing = evi()
        .args(["--model", "/nonexistent/model.json"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(3));

    let unwritable = evi()
        .args(["--model"])
        .arg(model_path("toy_two_decision.json"))
        .args(["--out", "/proc/no-such-dir/out"])
        .output()
        .unwrap();
    assert_eq!(unwritable.status.code(), Some(3));
}
