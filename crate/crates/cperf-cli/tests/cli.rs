//! End-to-end tests driving the compiled `cperf` binary as a subprocess:
//! exit codes, report files, determinism across worker counts, and the
//! config file merge rules.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cperf"))
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("process exited normally")
}

/// Generates a synthetic tree under `dir` and returns its manifest path.
fn synth(dir: &Path, pattern: &str, classes: u16, corrupt: f64, seed: u64) -> PathBuf {
    let output = bin()
        .args([
            "synth",
            "--out",
            dir.to_str().unwrap(),
            "--pattern",
            pattern,
            "--images",
            "6",
            "--size",
            "48",
            "--classes",
            &classes.to_string(),
            "--corrupt",
            &corrupt.to_string(),
            "--seed",
            &seed.to_string(),
        ])
        .output()
        .expect("synth runs");
    assert_eq!(exit_code(&output), 0, "synth failed: {}", stderr(&output));
    dir.join("manifest.json")
}

/// Two paired segmentation trees: clean ground truth on side A, the same
/// scenes with corrupted predictions on side B.
fn seg_pair(root: &Path) -> (PathBuf, PathBuf) {
    let a = synth(&root.join("a"), "blocks", 4, 0.0, 11);
    let b = synth(&root.join("b"), "blocks", 4, 0.25, 11);
    (a, b)
}

fn run_args(manifest_a: &Path, manifest_b: &Path, out: &Path) -> Vec<String> {
    vec![
        "run".into(),
        "--manifest-a".into(),
        manifest_a.display().to_string(),
        "--manifest-b".into(),
        manifest_b.display().to_string(),
        "--patch-size".into(),
        "12".into(),
        "--patches-per-image".into(),
        "8".into(),
        "--threshold".into(),
        "0.7".into(),
        "--seed".into(),
        "5".into(),
        "--out".into(),
        out.display().to_string(),
    ]
}

#[test]
fn synth_then_validate_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "stripes", 3, 0.0, 42);
    let output = bin()
        .args(["validate", "--manifest", manifest.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 0, "{}", stderr(&output));
    let text = stdout(&output);
    assert!(text.contains("mode: segmentation"), "{text}");
    assert!(text.contains("samples: 6"), "{text}");
    assert!(text.trim_end().ends_with("ok"), "{text}");
}

#[test]
fn run_writes_all_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = seg_pair(dir.path());
    let out = dir.path().join("out");
    let output = bin().args(run_args(&a, &b, &out)).output().unwrap();
    assert_eq!(exit_code(&output), 0, "{}", stderr(&output));

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let difference = report["result"]["cperf_difference"].as_f64().unwrap();
    assert!(difference > 0.0, "corrupted side must show a gap");
    assert_eq!(report["result"]["config_echo"]["spec"]["patch_size"], 12);

    let csv = std::fs::read_to_string(out.join("batches.csv")).unwrap();
    assert!(csv.starts_with(
        "batch,reference_image,reference_index,x,y,side,anchor_class,error,mean_a,mean_b,n_a,n_b"
    ));
    let svg = std::fs::read_to_string(out.join("cperf.svg")).unwrap();
    assert!(svg.starts_with("<svg"));

    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["payload_files"].as_array().unwrap().len(), 3);
    assert!(meta["elapsed_ms"].is_u64());

    let text = stdout(&output);
    assert!(text.contains("cperf difference:"), "{text}");
    assert!(text.contains("batches:"), "{text}");
}

#[test]
fn payload_files_are_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = seg_pair(dir.path());
    let mut payloads = Vec::new();
    for jobs in ["1", "2"] {
        let out = dir.path().join(format!("out{jobs}"));
        let mut args = run_args(&a, &b, &out);
        args.extend(["--jobs".into(), jobs.into()]);
        let output = bin().args(&args).output().unwrap();
        assert_eq!(exit_code(&output), 0, "{}", stderr(&output));
        payloads.push((
            std::fs::read(out.join("report.json")).unwrap(),
            std::fs::read(out.join("batches.csv")).unwrap(),
            std::fs::read(out.join("cperf.svg")).unwrap(),
        ));
    }
    assert_eq!(payloads[0], payloads[1], "payload bytes depend on --jobs");
}

#[test]
fn self_comparison_reports_zero_difference() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(&dir.path().join("a"), "blocks", 4, 0.1, 7);
    let out = dir.path().join("out");
    let output = bin().args(run_args(&a, &a, &out)).output().unwrap();
    assert_eq!(exit_code(&output), 0, "{}", stderr(&output));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["result"]["cperf_difference"].as_f64().unwrap(), 0.0);
}

#[test]
fn detection_run_reports_per_class_breakdown() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(&dir.path().join("a"), "scattered_boxes", 2, 0.0, 5);
    let b = synth(&dir.path().join("b"), "scattered_boxes", 2, 0.3, 5);
    let out = dir.path().join("out");
    let output = bin()
        .args([
            "run",
            "--manifest-a",
            a.to_str().unwrap(),
            "--manifest-b",
            b.to_str().unwrap(),
            "--mode",
            "detection",
            "--threshold",
            "0.6",
            "--anchor-scale",
            "2.0",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 0, "{}", stderr(&output));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let per_class = report["result"]["per_class"].as_object().unwrap();
    assert!(!per_class.is_empty(), "detection runs key errors by class");
    assert!(stdout(&output).contains("class_"), "{}", stdout(&output));
}

#[test]
fn invalid_threshold_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = seg_pair(dir.path());
    let mut args = run_args(&a, &b, &dir.path().join("out"));
    let pos = args.iter().position(|s| s == "0.7").unwrap();
    args[pos] = "0".into();
    let output = bin().args(&args).output().unwrap();
    assert_eq!(exit_code(&output), 2);
    assert!(stderr(&output).contains("threshold"), "{}", stderr(&output));
}

#[test]
fn missing_manifest_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let b = synth(&dir.path().join("b"), "blocks", 4, 0.0, 11);
    let args = run_args(&dir.path().join("absent.json"), &b, &dir.path().join("out"));
    let output = bin().args(&args).output().unwrap();
    assert_eq!(exit_code(&output), 3);
}

#[test]
fn disjoint_content_exits_with_no_batch_code_and_hint() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(&dir.path().join("a"), "blocks", 4, 0.0, 11);
    let b = synth(&dir.path().join("b"), "blocks", 4, 0.0, 99);
    let output = bin()
        .args([
            "run",
            "--manifest-a",
            a.to_str().unwrap(),
            "--manifest-b",
            b.to_str().unwrap(),
            "--patch-size",
            "12",
            "--patches-per-image",
            "4",
            "--threshold",
            "1.0",
            "--min-batch",
            "6",
            "--out",
            dir.path().join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 4, "{}", stderr(&output));
    assert!(stderr(&output).contains("hint:"), "{}", stderr(&output));
    assert!(
        stderr(&output).contains("--threshold"),
        "{}",
        stderr(&output)
    );
}

#[test]
fn mode_flag_rejects_mismatched_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = seg_pair(dir.path());
    let mut args = run_args(&a, &b, &dir.path().join("out"));
    args.extend(["--mode".into(), "detection".into()]);
    let output = bin().args(&args).output().unwrap();
    assert_eq!(exit_code(&output), 2);
    assert!(
        stderr(&output).contains("segmentation"),
        "{}",
        stderr(&output)
    );
}

#[test]
fn level_without_bootstrap_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = seg_pair(dir.path());
    let mut args = run_args(&a, &b, &dir.path().join("out"));
    args.extend(["--level".into(), "0.9".into()]);
    let output = bin().args(&args).output().unwrap();
    assert_eq!(exit_code(&output), 2);
    assert!(
        stderr(&output).contains("--bootstrap"),
        "{}",
        stderr(&output)
    );
}

#[test]
fn jobs_environment_variable_sets_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = seg_pair(dir.path());
    let out = dir.path().join("out");
    let output = bin()
        .env("CPERF_JOBS", "3")
        .args(run_args(&a, &b, &out))
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 0, "{}", stderr(&output));
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["jobs"], 3);

    // the flag outranks the environment
    let out2 = dir.path().join("out2");
    let mut args = run_args(&a, &b, &out2);
    args.extend(["--jobs".into(), "2".into()]);
    let output = bin().env("CPERF_JOBS", "3").args(&args).output().unwrap();
    assert_eq!(exit_code(&output), 0, "{}", stderr(&output));
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out2.join("run_meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["jobs"], 2);
}

#[test]
fn malformed_jobs_environment_variable_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = seg_pair(dir.path());
    let output = bin()
        .env("CPERF_JOBS", "many")
        .args(run_args(&a, &b, &dir.path().join("out")))
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 2);
    assert!(
        stderr(&output).contains("CPERF_JOBS"),
        "{}",
        stderr(&output)
    );
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = seg_pair(dir.path());
    let out = dir.path().join("out");
    let config_path = dir.path().join("config.json");
    std::fs::write(
        &config_path,
        serde_json::json!({
            "manifest_a": a,
            "manifest_b": b,
            "patch_size": 12,
            "patches_per_image": 8,
            "threshold": 0.9,
            "seed": 5,
            "out": out,
        })
        .to_string(),
    )
    .unwrap();

    // config alone drives a full run
    let output = bin()
        .args(["run", "--config", config_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 0, "{}", stderr(&output));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(
        report["result"]["config_echo"]["spec"]["threshold"]
            .as_f64()
            .unwrap(),
        0.9
    );

    // a flag overrides the same field from the file
    let output = bin()
        .args([
            "run",
            "--config",
            config_path.to_str().unwrap(),
            "--threshold",
            "0.7",
        ])
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 0, "{}", stderr(&output));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(
        report["result"]["config_echo"]["spec"]["threshold"]
            .as_f64()
            .unwrap(),
        0.7
    );
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    std::fs::write(&config_path, r#"{"patch_sizes": 12}"#).unwrap();
    let output = bin()
        .args(["run", "--config", config_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 2);
    assert!(
        stderr(&output).contains("patch_sizes"),
        "{}",
        stderr(&output)
    );
}

#[test]
fn emit_subset_writes_only_requested_formats() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = seg_pair(dir.path());
    let out = dir.path().join("out");
    let mut args = run_args(&a, &b, &out);
    args.extend(["--emit".into(), "json".into()]);
    let output = bin().args(&args).output().unwrap();
    assert_eq!(exit_code(&output), 0, "{}", stderr(&output));
    assert!(out.join("report.json").exists());
    assert!(!out.join("batches.csv").exists());
    assert!(!out.join("cperf.svg").exists());
}

#[test]
fn preset_fills_spec_fields_and_explicit_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = seg_pair(dir.path());
    let out = dir.path().join("out");
    let output = bin()
        .args([
            "run",
            "--manifest-a",
            a.to_str().unwrap(),
            "--manifest-b",
            b.to_str().unwrap(),
            "--preset",
            "city128",
            "--patch-size",
            "12",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 0, "{}", stderr(&output));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let spec = &report["result"]["config_echo"]["spec"];
    assert_eq!(spec["patch_size"], 12, "flag overrides the preset");
    assert_eq!(spec["patches_per_image"], 64);
    assert_eq!(spec["threshold"].as_f64().unwrap(), 0.75);
}

#[test]
fn bootstrap_flag_adds_interval_to_report_and_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = seg_pair(dir.path());
    let out = dir.path().join("out");
    let mut args = run_args(&a, &b, &out);
    args.extend([
        "--bootstrap".into(),
        "200".into(),
        "--level".into(),
        "0.9".into(),
    ]);
    let output = bin().args(&args).output().unwrap();
    assert_eq!(exit_code(&output), 0, "{}", stderr(&output));
    assert!(
        stdout(&output).contains("90% bootstrap interval"),
        "{}",
        stdout(&output)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let ci = &report["result"]["bootstrap_ci"];
    assert!(ci["low"].as_f64().unwrap() <= ci["high"].as_f64().unwrap());
    assert_eq!(ci["level"].as_f64().unwrap(), 0.9);
}
