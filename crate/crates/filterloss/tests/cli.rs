//! Black-box checks of the binary: generated artifacts, determinism under
//! a fixed seed, and the exit-code contract (0 ok, 1 usage error, 2 bad
//! input, 3 runtime failure).

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_filterloss")).args(args).output().expect("spawn binary")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn report_results(path: &Path) -> serde_json::Value {
    let text = fs::read_to_string(path).expect("report file");
    let report: serde_json::Value = serde_json::from_str(&text).expect("report json");
    report.get("results").cloned().expect("results section")
}

const GEN_FILES: [&str; 4] =
    ["source.csv", "target.csv", "target_train.csv", "target_test.csv"];

#[test]
fn gen_writes_the_datasets_and_a_report() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = run(&["gen", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    for name in GEN_FILES {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    let results = report_results(&dir.path().join("gen_report.json"));
    let files = results["files"].as_array().expect("files array");
    assert_eq!(files.len(), 4);
    let rows_of = |name: &str| -> u64 {
        files
            .iter()
            .find(|f| f["file"] == name)
            .unwrap_or_else(|| panic!("no summary for {name}"))["rows"]
            .as_u64()
            .expect("rows")
    };
    assert_eq!(rows_of("source.csv"), 3000);
    assert_eq!(rows_of("target.csv"), 1300);
    assert_eq!(rows_of("target_train.csv") + rows_of("target_test.csv"), 1300);
    assert!(files.iter().all(|f| f["classes"].as_array().is_some_and(|c| c.len() == 6)));
}

#[test]
fn gen_is_reproducible_and_seed_sensitive() {
    let a = tempfile::tempdir().expect("tempdir");
    let b = tempfile::tempdir().expect("tempdir");
    let c = tempfile::tempdir().expect("tempdir");
    assert_eq!(code(&run(&["gen", "--out", a.path().to_str().unwrap()])), 0);
    assert_eq!(code(&run(&["gen", "--out", b.path().to_str().unwrap()])), 0);
    assert_eq!(code(&run(&["gen", "--seed", "1", "--out", c.path().to_str().unwrap()])), 0);

    for name in GEN_FILES {
        let bytes_a = fs::read(a.path().join(name)).expect("csv");
        let bytes_b = fs::read(b.path().join(name)).expect("csv");
        assert_eq!(bytes_a, bytes_b, "{name} differs between identical runs");
    }
    // the results blocks agree apart from the output directory itself
    assert_eq!(
        report_results(&a.path().join("gen_report.json"))["files"],
        report_results(&b.path().join("gen_report.json"))["files"]
    );
    let seeded = fs::read(c.path().join("target.csv")).expect("csv");
    let base = fs::read(a.path().join("target.csv")).expect("csv");
    assert_ne!(seeded, base, "changing the seed left the data untouched");
}

#[test]
fn usage_and_input_errors_use_distinct_exit_codes() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--definitely-not-a-flag"])), 1);
    assert_eq!(code(&run(&[])), 1, "missing subcommand is a usage error");

    // structurally fine invocation, but gen cannot run without --out
    assert_eq!(code(&run(&["gen"])), 2);

    let dir = tempfile::tempdir().expect("tempdir");
    let bad_config = dir.path().join("config.json");
    fs::write(&bad_config, "not json at all").expect("write");
    let out = run(&["gen", "--config", bad_config.to_str().unwrap(), "--out",
        dir.path().join("x").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn impossible_resampling_is_a_runtime_failure() {
    let dir = tempfile::tempdir().expect("tempdir");
    let input = dir.path().join("tiny.csv");
    // three rows of one class and a single row of the other: smote has no
    // second neighbor to interpolate with
    fs::write(&input, "f0,label\n1.0e0,a\n2.0e0,a\n3.0e0,a\n9.0e0,b\n").expect("write");
    let out = run(&[
        "resample",
        "--method",
        "smote",
        "--in",
        input.to_str().unwrap(),
        "--out",
        dir.path().join("resampled.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    // the same dataset is fine for a method that only drops rows
    let out = run(&[
        "resample",
        "--method",
        "rus",
        "--in",
        input.to_str().unwrap(),
        "--out",
        dir.path().join("resampled.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let kept = fs::read_to_string(dir.path().join("resampled.csv")).expect("csv");
    assert_eq!(kept.lines().count(), 3, "one row per class plus the header");
}

#[test]
fn weights_cover_every_row_and_respect_the_table() {
    let dir = tempfile::tempdir().expect("tempdir");
    assert_eq!(code(&run(&["gen", "--out", dir.path().to_str().unwrap()])), 0);
    let train = dir.path().join("target_train.csv");
    let report = dir.path().join("weights.json");
    let out = run(&[
        "weights",
        "--in",
        train.to_str().unwrap(),
        "--samplers",
        "enn,oss",
        "--table",
        "0.0,0.5,1.0",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let results = report_results(&report);
    let rows = fs::read_to_string(&train).expect("csv").lines().count() - 1;
    let weights = results["weights"].as_array().expect("weights");
    assert_eq!(weights.len(), rows);
    assert!(weights
        .iter()
        .all(|w| matches!(w.as_f64(), Some(v) if [0.0, 0.5, 1.0].contains(&v))));
    let bands = results["bands"].as_array().expect("bands");
    assert_eq!(bands.len(), 3);
    let counted: u64 = bands.iter().map(|b| b["count"].as_u64().expect("count")).sum();
    assert_eq!(counted as usize, rows);
}

#[test]
fn pretrain_then_finetune_runs_end_to_end() {
    let dir = tempfile::tempdir().expect("tempdir");
    assert_eq!(code(&run(&["gen", "--out", dir.path().to_str().unwrap()])), 0);
    let model = dir.path().join("model.bin");
    let pre_report = dir.path().join("pretrain.json");
    let out = run(&[
        "pretrain",
        "--data",
        dir.path().join("source.csv").to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
        "--report",
        pre_report.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(model.is_file());
    let pre = report_results(&pre_report);
    assert_eq!(pre["epochs"].as_array().expect("epochs").len(), 10);

    let ft_report = dir.path().join("finetune.json");
    let out = run(&[
        "finetune",
        "--model",
        model.to_str().unwrap(),
        "--train",
        dir.path().join("target_train.csv").to_str().unwrap(),
        "--eval",
        dir.path().join("target_test.csv").to_str().unwrap(),
        "--strategy",
        "filterloss:enn",
        "--loss",
        "focal_logits",
        "--report",
        ft_report.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let ft = report_results(&ft_report);
    assert_eq!(ft["strategy"], "filterloss:enn");
    assert_eq!(ft["epochs"].as_array().expect("epochs").len(), 10);
    let macro_f1 = ft["final_eval"]["macro_f1"].as_f64().expect("macro f1");
    assert!(
        macro_f1 > 0.35,
        "fine-tuned macro F1 {macro_f1} looks untrained"
    );
    // down-weighted rows shrink the weight mass below the row count
    let mass = ft["weight_mass"].as_f64().expect("weight mass");
    let rows = ft["train_rows"].as_f64().expect("train rows");
    assert!(mass < rows);
}

#[test]
fn analyze_compares_two_datasets_by_class() {
    let dir = tempfile::tempdir().expect("tempdir");
    assert_eq!(code(&run(&["gen", "--out", dir.path().to_str().unwrap()])), 0);
    let report = dir.path().join("analysis.json");
    let out = run(&[
        "analyze",
        "--a",
        dir.path().join("source.csv").to_str().unwrap(),
        "--b",
        dir.path().join("target.csv").to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let results = report_results(&report);
    let deltas = results["deltas"].as_array().expect("deltas");
    assert_eq!(deltas.len(), 6);
    // the fine-tuning distribution adds noise, so every class gets wider
    assert!(deltas
        .iter()
        .all(|d| d["delta_euclid"].as_f64().is_some_and(|v| v > 0.0)));
}
