//! End-to-end exercises of the installed binary: argument parsing, exit
//! codes, and the synth → train → eval round trip, all through real
//! processes rather than library calls.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_babymamba"))
}

fn run_args(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary should spawn")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Last non-empty stdout line parsed as JSON (commands append a
/// machine-readable trailer after their human-readable table).
fn json_trailer(out: &Output) -> serde_json::Value {
    let text = stdout(out);
    let line = text.lines().rev().find(|l| !l.trim().is_empty()).expect("no output lines");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("bad JSON trailer {line:?}: {e}"))
}

#[test]
fn count_reports_defaults_with_json_trailer() {
    let out = run_args(&[
        "count", "--variant", "crossover", "--channels", "6", "--classes", "6", "--seq-len", "128",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let v = json_trailer(&out);
    assert_eq!(v["total_params"], 25460);
    assert!(v["total_macs"].as_u64().unwrap() > 1_000_000);
}

#[test]
fn count_suite_averages_eight_presets() {
    let out = run_args(&["count", "--presets", "benchmarks"]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let v = json_trailer(&out);
    assert_eq!(v["per_dataset"].as_object().unwrap().len(), 8);
    let avg = v["average_macs"].as_f64().unwrap();
    assert!(avg > 1e6 && avg < 1e7, "suite average {avg}");
}

#[test]
fn count_without_shape_is_a_config_error() {
    let out = run_args(&["count"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error:"), "stderr: {}", stderr(&out));
}

#[test]
fn unknown_preset_fails_argument_parsing() {
    let out = run_args(&["count", "--preset", "nosuch"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_manifest_is_an_io_error() {
    let out = run_args(&["train", "--manifest", "/nonexistent/manifest.json"]);
    assert_eq!(out.status.code(), Some(1), "stderr: {}", stderr(&out));
}

#[test]
fn corrupt_csv_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    synth_tiny(dir.path(), &[]);
    // Damage one field; the loader should name the offending line.
    let csv_path = dir.path().join("corpus.csv");
    let mut lines: Vec<String> =
        std::fs::read_to_string(&csv_path).unwrap().lines().map(String::from).collect();
    let mut fields: Vec<&str> = lines[4].split(',').collect();
    fields[3] = "bogus";
    lines[4] = fields.join(",");
    std::fs::write(&csv_path, lines.join("\n") + "\n").unwrap();
    let out = run_args(&[
        "train",
        "--manifest",
        dir.path().join("manifest.json").to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("line"), "stderr: {}", stderr(&out));
}

fn synth_tiny(dir: &Path, extra: &[&str]) {
    let mut args = vec![
        "synth".to_string(),
        "--out".into(),
        dir.to_str().unwrap().into(),
        "--subjects".into(),
        "3".into(),
        "--classes".into(),
        "2".into(),
        "--channels".into(),
        "2".into(),
        "--samples-per-class".into(),
        "160".into(),
        "--seq-len".into(),
        "40".into(),
        "--stride".into(),
        "20".into(),
        "--seed".into(),
        "5".into(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    let out = bin().args(&args).output().unwrap();
    assert!(out.status.success(), "synth failed: {}", stderr(&out));
    assert!(dir.join("corpus.csv").is_file());
    assert!(dir.join("manifest.json").is_file());
}

#[test]
fn synth_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir(&data).unwrap();
    synth_tiny(&data, &[]);

    let run_dir = dir.path().join("run");
    let manifest = data.join("manifest.json");
    let out = run_args(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--seeds",
        "1",
        "--max-epochs",
        "2",
    ]);
    assert!(out.status.success(), "train failed: {}", stderr(&out));
    for artifact in ["config.json", "summary.json", "model_seed0.bin", "epochs_seed0.jsonl"] {
        assert!(run_dir.join(artifact).is_file(), "missing {artifact}");
    }

    // Every line of the epoch log is standalone JSON carrying the metrics.
    let log = std::fs::read_to_string(run_dir.join("epochs_seed0.jsonl")).unwrap();
    for line in log.lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(rec["val_macro_f1"].is_number(), "epoch record: {line}");
    }

    // Evaluation must reproduce the stored scores exactly.
    let out = run_args(&["eval", "--run", run_dir.to_str().unwrap()]);
    assert!(out.status.success(), "eval failed: {}", stderr(&out));
    assert!(stdout(&out).contains("reproduced"), "stdout: {}", stdout(&out));

    // A tampered manifest invalidates the run directory.
    let text = std::fs::read_to_string(&manifest).unwrap();
    std::fs::write(&manifest, text + "\n").unwrap();
    let out = run_args(&["eval", "--run", run_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("changed"), "stderr: {}", stderr(&out));
}

#[test]
fn eval_single_model_against_manifest() {
    let dir = tempfile::tempdir().unwrap();
    synth_tiny(dir.path(), &[]);
    let run_dir = dir.path().join("run");
    let manifest = dir.path().join("manifest.json");
    let out = run_args(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--seeds",
        "1",
        "--max-epochs",
        "1",
    ]);
    assert!(out.status.success(), "train failed: {}", stderr(&out));

    let model = run_dir.join("model_seed0.bin");
    let out = run_args(&[
        "eval",
        "--model",
        model.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "eval failed: {}", stderr(&out));
    let v = json_trailer(&out);
    assert!(v["macro_f1"].is_number());
    assert_eq!(v["confusion"].as_array().unwrap().len(), 2);
}

#[test]
fn ablate_count_only_prints_deltas() {
    let out = run_args(&["ablate", "--axis", "d_state", "--preset", "uci-har", "--count-only"]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("baseline"), "stdout: {text}");
    assert!(text.contains('%'), "stdout: {text}");
}

#[test]
fn directional_synthesis_produces_loadable_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_args(&[
        "synth",
        "--out",
        dir.path().to_str().unwrap(),
        "--directional",
        "--subjects",
        "2",
        "--channels",
        "2",
        "--samples-per-class",
        "256",
        "--seq-len",
        "64",
        "--stride",
        "64",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["num_classes"], 2);
    assert_eq!(manifest["seq_len"], 64);
}
