//! End-to-end subcommand tests on a miniature synthetic run.

use std::fs;
use std::path::Path;
use std::process::Command;

fn decan() -> Command {
    Command::new(env!("CARGO_BIN_EXE_decan"))
}

/// Small, fast configuration: 2 subjects, 2 blocks, short trials, few epochs.
fn write_small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    fs::write(
        &path,
        r#"
seed = 21

[synthetic]
n_subjects = 2
n_blocks = 2
trials_per_block = 5
trial_seconds = 10.0
latent_dim = 2
wet_channels = 3
dry_channels = 2
wet_noise_sigma = 0.2
dry_noise_sigma = 3.0

[model]
epochs = 25
learning_rate = 0.003

[eval]
models = ["dnn", "decan"]
baseline_epochs = 40
"#,
    )
    .unwrap();
    path
}

fn run_stage(config: &Path, out: &Path, args: &[&str]) {
    let status = decan()
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .status()
        .expect("spawning decan");
    assert!(status.success(), "stage {args:?} failed");
}

fn run_pipeline(config: &Path, out: &Path) {
    for stage in ["synth", "preprocess", "featurize", "crossval", "train", "eval", "report"] {
        run_stage(config, out, &[stage]);
    }
}

#[test]
fn full_pipeline_produces_expected_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let out = dir.path().join("run");
    run_pipeline(&config, &out);

    for artifact in [
        "synth/data/manifest.json",
        "synth/files.json",
        "preprocess/data/manifest.json",
        "featurize/features_manifest.json",
        "crossval/report.json",
        "crossval/per_subject_accuracy.csv",
        "crossval/confusion_matrix.csv",
        "crossval/per_band_accuracy.csv",
        "crossval/latents.json",
        "train/model.ckpt",
        "train/history.json",
        "eval/metrics.json",
        "eval/predictions.csv",
        "eval/latents.json",
        "report/summary.json",
        "report/summary.csv",
    ] {
        assert!(out.join(artifact).is_file(), "missing {artifact}");
    }

    // Every JSON artifact parses and carries the same config hash.
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("crossval/report.json")).unwrap())
            .unwrap();
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report/summary.json")).unwrap())
            .unwrap();
    assert_eq!(report["config_hash"], summary["config_hash"]);
    assert_eq!(report["experiments"].as_array().unwrap().len(), 2);

    // t-test between decan and the baseline is present in the summary.
    assert!(summary["significance"].as_array().is_some());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run_pipeline(&config, &out_a);
    run_pipeline(&config, &out_b);

    for artifact in [
        "synth/data/manifest.json",
        "synth/data/s01_wet_b1_t1.f32",
        "preprocess/data/s02_dry_b2_t3.f32",
        "featurize/s01_dry_b1_t2.feat",
        "crossval/report.json",
        "crossval/per_subject_accuracy.csv",
        "train/model.ckpt",
        "eval/metrics.json",
        "report/summary.json",
        "report/summary.csv",
    ] {
        let a = fs::read(out_a.join(artifact)).unwrap();
        let b = fs::read(out_b.join(artifact)).unwrap();
        assert_eq!(a, b, "artifact {artifact} differs between reruns");
    }
}

#[test]
fn unknown_config_key_fails_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "[model]\nbananas = 3\n").unwrap();
    let output = decan()
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("x"))
        .arg("synth")
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("model.bananas"), "stderr: {stderr}");
}

#[test]
fn set_overrides_change_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let out = dir.path().join("run");
    run_stage(&config, &out, &["synth"]);
    let files: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("synth/files.json")).unwrap()).unwrap();

    let out2 = dir.path().join("run2");
    let status = decan()
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&out2)
        .arg("--set")
        .arg("synthetic.trial_seconds=11.0")
        .arg("synth")
        .status()
        .unwrap();
    assert!(status.success());
    let files2: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out2.join("synth/files.json")).unwrap()).unwrap();
    assert_ne!(files["config_hash"], files2["config_hash"]);
}

#[test]
fn report_refuses_mixed_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let out = dir.path().join("run");
    for stage in ["synth", "preprocess", "featurize", "crossval"] {
        run_stage(&config, &out, &[stage]);
    }
    // Second crossval with a different seed -> different hash.
    let out2 = dir.path().join("run_alt");
    for stage in ["synth", "preprocess", "featurize", "crossval"] {
        let status = decan()
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&out2)
            .arg("--seed")
            .arg("99")
            .arg(stage)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let output = decan()
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("agg"))
        .arg("report")
        .arg("--from")
        .arg(out.join("crossval"))
        .arg("--from")
        .arg(out2.join("crossval"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("mixed config hashes"), "stderr: {stderr}");
}
