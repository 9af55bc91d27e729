use std::path::Path;
use std::process::{Command, Output};

fn adcov(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adcov")).args(args).output().unwrap()
}

fn text(out: &[u8]) -> String {
    String::from_utf8_lossy(out).into_owned()
}

#[test]
fn run_writes_export_and_summary_under_out() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = adcov(&["run", "--preset", "table1", "--set", "duration=0.5", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    let csv = std::fs::read_to_string(out.join("run.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["param_errors"].as_array().unwrap().len(), 5);
    assert!(summary["e_p"].as_f64().unwrap() > 0.0);
    assert!(out.join("scenario.toml").exists());
}

#[test]
fn jsonl_format_and_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    let doc = dir.path().join("s.toml");
    std::fs::write(
        &doc,
        r#"
duration = 0.3
[domain]
vertices = [[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]]
[agents]
count = 2
poses = [[0.5, 0.5, 0.0], [1.5, 1.5, 1.0]]
[density]
centers = [[1.0, 1.0]]
widths = [0.5]
true_params = [10.0]
"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    let o = adcov(&[
        "run",
        "--scenario",
        doc.to_str().unwrap(),
        "--format",
        "jsonl",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    let jsonl = std::fs::read_to_string(out.join("run.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 4);
    assert!(!out.join("run.csv").exists());
}

#[test]
fn unknown_override_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let o = adcov(&["run", "--set", "gains.bogus=1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("gains.bogus"), "{}", text(&o.stderr));
    assert!(!Path::new(&out).exists());
}

#[test]
fn invalid_values_and_arguments_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(adcov(&["run", "--set", "duration=-1", "--out", out]).status.code(), Some(1));
    assert_eq!(adcov(&["run", "--preset", "nope", "--out", out]).status.code(), Some(1));
    assert_eq!(adcov(&["run", "--format", "xml", "--out", out]).status.code(), Some(1));
    assert_eq!(adcov(&["verify", "--only", "c42"]).status.code(), Some(1));
    assert_eq!(adcov(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let out = blocker.join("sub");
    let o = adcov(&["run", "--set", "duration=0", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o.stderr));
}

#[test]
fn preset_list_names_every_preset() {
    let o = adcov(&["preset-list"]);
    assert_eq!(o.status.code(), Some(0));
    let s = text(&o.stdout);
    assert!(s.contains("table1"));
    assert!(s.contains("single_agent"));
}

#[test]
fn compare_writes_side_by_side_series() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp");
    let o = adcov(&[
        "compare",
        "--set",
        "duration=0.5",
        "--variant",
        "undirected",
        "--variant",
        "directed+gains.zeta=2",
        "--seeds",
        "3,4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    let csv = std::fs::read_to_string(out.join("seed_3").join("compare.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 1 + 2 * 4);
    assert!(header.contains("undirected.e_p"));
    assert!(header.contains("directed+gains.zeta=2.disagreement"));
    assert_eq!(csv.lines().count(), 1 + 6);
    let finals = std::fs::read_to_string(out.join("final.csv")).unwrap();
    assert_eq!(finals.lines().count(), 1 + 2 * 2);
}

#[test]
fn compare_needs_two_variants() {
    let dir = tempfile::tempdir().unwrap();
    let o = adcov(&["compare", "--variant", "l2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let o = adcov(&["compare", "--variant", "l2,warp", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("warp"));
}

#[test]
fn verify_detects_injected_gradient_fault() {
    let dir = tempfile::tempdir().unwrap();
    let o = adcov(&[
        "verify",
        "--only",
        "c01",
        "--inject-fault",
        "gradient",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(text(&o.stdout).contains("FAIL c01"));
    let report = std::fs::read_to_string(dir.path().join("verify.txt")).unwrap();
    assert!(report.contains("0/1 checks passed"));
}

#[test]
fn verify_passes_a_clean_check() {
    let o = adcov(&["verify", "--only", "c07"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stdout));
    assert!(text(&o.stdout).contains("PASS c07"));
}
