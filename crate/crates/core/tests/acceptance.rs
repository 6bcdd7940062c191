//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured values once its assertions hold. Runtime budgets are
//! asserted in release builds only; debug builds run the same checks
//! unbudgeted. Run with:
//!
//! ```text
//! cargo test --release -p decan-core --test acceptance -- --nocapture
//! ```

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

use decan_core::data::SyntheticConfig;
use decan_core::decan::{
    contrastive_loss, finite_difference_check, ContrastiveMode, DecanConfig, DecanModel,
    PairMeta, PairedBatch, SegmentRef,
};
use decan_core::dsp::{design_bandpass, design_notch, resample, ResamplerSpec};
use decan_core::eval::{
    compute_metrics, paired_t_test, run_experiment, run_one_to_one, BaselineConfig, BaselineKind,
    ExperimentConfig, FoldScheme, ModelSpec, OneToOneConfig,
};
use decan_core::features::{differential_entropy, Band, FeatureConfig};
use decan_core::network::rmsprop_update;
use decan_core::pipeline::synthesize_features;

fn assert_budget(name: &str, elapsed: std::time::Duration, budget_secs: u64) {
    if cfg!(debug_assertions) {
        eprintln!("{name}: {elapsed:?} (budget {budget_secs}s applies to release builds)");
    } else {
        assert!(
            elapsed.as_secs() < budget_secs,
            "{name} exceeded its {budget_secs}s budget: {elapsed:?}"
        );
    }
}

/// Training settings shared by criteria 5 and 6: enough epochs for the joint
/// loss to converge through the alignment term.
fn accepted_decan_config(seed: u64) -> DecanConfig {
    let mut cfg = DecanConfig::new(1, 1);
    cfg.epochs = 600;
    cfg.learning_rate = 1e-3;
    cfg.seed = seed;
    cfg
}

fn accepted_baseline_config(seed: u64) -> BaselineConfig {
    BaselineConfig {
        epochs: 600,
        learning_rate: 1e-3,
        seed,
        ..BaselineConfig::default()
    }
}

#[test]
fn criterion_1_gradient_correctness() {
    let start = Instant::now();
    let mut worst_overall = 0.0f64;
    for mode in [ContrastiveMode::InclusivePositive, ContrastiveMode::StrictPaper] {
        let mut cfg = DecanConfig::new(10, 6);
        cfg.projector_hidden = 64;
        cfg.projector_out = 16;
        cfg.contrastive_mode = mode;
        cfg.seed = 42;
        let model = DecanModel::new(cfg).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = 8;
        let wet = Array2::from_shape_fn((t, 10), |_| rng.random_range(-1.0..1.0));
        let dry = Array2::from_shape_fn((t, 6), |_| rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..t).map(|i| i % 5).collect();
        let meta = (0..t)
            .map(|i| {
                let r = SegmentRef {
                    subject: 1,
                    block: 1,
                    trial: 1,
                    segment_index: i,
                };
                PairMeta {
                    wet: r,
                    dry: r,
                    label: labels[i],
                }
            })
            .collect();
        let batch = PairedBatch {
            wet,
            dry,
            labels,
            meta,
        };
        let worst = finite_difference_check(&model, &batch, 1e-5).unwrap();
        assert!(
            worst < 1e-4,
            "{mode:?}: worst relative gradient error {worst:.3e} >= 1e-4"
        );
        worst_overall = worst_overall.max(worst);
    }
    assert_budget("criterion 1", start.elapsed(), 30);
    println!(
        "ACCEPTANCE 1 gradient-correctness: PASS (worst rel err {worst_overall:.3e}, {:.2?})",
        start.elapsed()
    );
}

#[test]
fn criterion_2_analytic_golden_values() {
    // DE at unit variance and at the variance that inverts to exactly 1 nat.
    let de_unit = differential_entropy(&[-1.0, 1.0]).unwrap();
    assert!((de_unit - 1.418939).abs() <= 1e-6, "DE(1) = {de_unit}");
    let s = (std::f64::consts::E / std::f64::consts::TAU).sqrt();
    let de_one = differential_entropy(&[-s, s]).unwrap();
    assert!((de_one - 1.0).abs() <= 1e-6, "DE(e/2pi) = {de_one}");

    let logits = Array2::zeros((4, 5));
    let (ce, _) =
        decan_core::network::softmax_cross_entropy(&logits, &[0, 1, 2, 3]).unwrap();
    assert!((ce - 5f64.ln()).abs() <= 1e-9, "uniform CE = {ce}");

    let pw = ndarray::array![[1.0, 0.0], [0.0, 1.0]];
    let inclusive =
        contrastive_loss(&pw, &pw.clone(), 0.5, ContrastiveMode::InclusivePositive).unwrap();
    assert!(
        (inclusive - 0.253856).abs() <= 1e-6,
        "inclusive contrastive = {inclusive}"
    );
    let strict = contrastive_loss(&pw, &pw.clone(), 0.5, ContrastiveMode::StrictPaper).unwrap();
    assert!((strict - (-4.0)).abs() <= 1e-9, "strict contrastive = {strict}");

    let mut theta = [0.0f64];
    let mut v = [0.0f64];
    rmsprop_update(&mut theta, &[1.0], &mut v, 0.9, 0.01, 1e-8);
    assert!(
        (theta[0] - (-0.0316228)).abs() <= 1e-6,
        "rmsprop first step = {}",
        theta[0]
    );

    println!(
        "ACCEPTANCE 2 analytic-golden-values: PASS (DE {de_unit:.6}/{de_one:.6}, CE {ce:.6}, CL {inclusive:.6}/{strict:.1}, RMSprop {:.7})",
        theta[0]
    );
}

#[test]
fn criterion_3_dsp_responses() {
    let start = Instant::now();
    let bandpass = design_bandpass(1.0, 50.0, 200.0, 4).unwrap();
    let dc = bandpass.gain_db_at(0.0);
    assert!(dc <= -40.0, "band-pass DC gain {dc} dB");
    let mid = bandpass.gain_db_at(10.0);
    assert!(mid.abs() <= 1.0, "band-pass 10 Hz gain {mid} dB");

    let notch = design_notch(50.0, 30.0, 200.0).unwrap();
    let at_notch = notch.gain_db_at(50.0);
    assert!(at_notch <= -30.0, "notch 50 Hz gain {at_notch} dB");

    // 10 Hz tone, 3 s @300 Hz -> 600 samples @200 Hz; DFT peak at bin 30.
    let spec = ResamplerSpec::for_rates(300.0, 200.0).unwrap();
    let x: Vec<f64> = (0..900)
        .map(|i| (std::f64::consts::TAU * 10.0 * i as f64 / 300.0).sin())
        .collect();
    let y = resample(&x, &spec).unwrap();
    assert_eq!(y.len(), 600);
    let mut peak_bin = 0;
    let mut peak = 0.0;
    for bin in 1..y.len() / 2 {
        let (mut re, mut im) = (0.0, 0.0);
        for (i, &v) in y.iter().enumerate() {
            let phase = -std::f64::consts::TAU * bin as f64 * i as f64 / y.len() as f64;
            re += v * phase.cos();
            im += v * phase.sin();
        }
        let mag = (re * re + im * im).sqrt();
        if mag > peak {
            peak = mag;
            peak_bin = bin;
        }
    }
    assert!(
        (peak_bin as i64 - 30).abs() <= 1,
        "resampled tone peaked at bin {peak_bin}, expected 30 +- 1"
    );

    assert_budget("criterion 3", start.elapsed(), 10);
    println!(
        "ACCEPTANCE 3 dsp-responses: PASS (DC {dc:.1} dB, 10 Hz {mid:+.3} dB, notch {at_notch:.1} dB, peak bin {peak_bin}, {:.2?})",
        start.elapsed()
    );
}

// -- brute-force metric oracles (independent of eval::metrics internals) ----

fn auroc_brute(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores.iter().zip(positive).filter(|(_, &p)| p).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(positive).filter(|(_, &p)| !p).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for &p in &pos {
        for &q in &neg {
            if p > q {
                wins += 1.0;
            } else if p == q {
                wins += 0.5;
            }
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

fn auprc_brute(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for &t in &thresholds {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for (&s, &p) in scores.iter().zip(positive) {
            if s >= t {
                if p {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / n_pos as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(ap)
}

#[test]
fn criterion_4_metric_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(314);
    let mut checked = 0usize;
    for _ in 0..100 {
        let n = rng.random_range(5..=200);
        let k = 5;
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let mut scores = Array2::zeros((n, k));
        for i in 0..n {
            // quantized scores force ties through both code paths
            let mut row: Vec<f64> = (0..k).map(|_| rng.random_range(0..25) as f64 + 0.01).collect();
            let sum: f64 = row.iter().sum();
            for (j, v) in row.iter().enumerate() {
                scores[[i, j]] = v / sum;
            }
        }
        let predictions: Vec<usize> = (0..n)
            .map(|i| {
                let row = scores.row(i);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect();
        let report = compute_metrics(&predictions, &scores, &labels).unwrap();
        for cm in &report.per_class {
            let class_scores: Vec<f64> = scores.column(cm.class).to_vec();
            let positive: Vec<bool> = labels.iter().map(|&l| l == cm.class).collect();
            if let Some(want) = auroc_brute(&class_scores, &positive) {
                assert!(
                    (cm.auroc - want).abs() <= 1e-9,
                    "AUROC {} vs brute {want}",
                    cm.auroc
                );
            }
            let want_ap = auprc_brute(&class_scores, &positive).unwrap();
            assert!(
                (cm.auprc - want_ap).abs() <= 1e-9,
                "AUPRC {} vs brute {want_ap}",
                cm.auprc
            );
            let tp = labels
                .iter()
                .zip(&predictions)
                .filter(|(&l, &p)| l == cm.class && p == cm.class)
                .count() as f64;
            let predicted = predictions.iter().filter(|&&p| p == cm.class).count() as f64;
            let support = positive.iter().filter(|&&p| p).count() as f64;
            let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let recall = tp / support;
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            assert!((cm.precision - precision).abs() <= 1e-9);
            assert!((cm.recall - recall).abs() <= 1e-9);
            assert!((cm.f1 - f1).abs() <= 1e-9);
            checked += 1;
        }
    }
    println!("ACCEPTANCE 4 metric-oracle-equivalence: PASS ({checked} class instances within 1e-9)");
}

#[test]
fn criterion_5_synthetic_alignment_gain() {
    let start = Instant::now();
    let seeds = [101u64, 202, 303, 404, 505];
    let n_subjects = SyntheticConfig::default().n_subjects as usize;
    let mut baseline_acc = vec![0.0f64; n_subjects];
    let mut decan_acc = vec![0.0f64; n_subjects];

    for &seed in &seeds {
        let synth = SyntheticConfig {
            seed,
            ..SyntheticConfig::default()
        };
        let (wet, dry) = synthesize_features(
            &synth,
            &decan_core::dsp::DspConfig::default(),
            &FeatureConfig::default(),
        )
        .unwrap();

        let baseline = run_experiment(
            &[],
            &dry,
            &ExperimentConfig {
                scheme: FoldScheme::Lobo,
                model: ModelSpec::Baseline(BaselineKind::Dnn),
                band_mask: Band::ALL.to_vec(),
                decan: accepted_decan_config(seed),
                baseline: accepted_baseline_config(seed),
                export_latents: false,
            },
        )
        .unwrap();
        let decan = run_experiment(
            &wet,
            &dry,
            &ExperimentConfig {
                scheme: FoldScheme::Lobo,
                model: ModelSpec::Decan,
                band_mask: Band::ALL.to_vec(),
                decan: accepted_decan_config(seed),
                baseline: accepted_baseline_config(seed),
                export_latents: false,
            },
        )
        .unwrap();
        for (i, s) in baseline.per_subject.iter().enumerate() {
            baseline_acc[i] += s.accuracy_mean / seeds.len() as f64;
        }
        for (i, s) in decan.per_subject.iter().enumerate() {
            decan_acc[i] += s.accuracy_mean / seeds.len() as f64;
        }
    }

    let mean_baseline: f64 = baseline_acc.iter().sum::<f64>() / n_subjects as f64;
    let mean_decan: f64 = decan_acc.iter().sum::<f64>() / n_subjects as f64;
    let gap_points = 100.0 * (mean_decan - mean_baseline);
    let wins = decan_acc
        .iter()
        .zip(&baseline_acc)
        .filter(|(d, b)| d > b)
        .count();

    assert!(
        gap_points >= 3.0,
        "alignment gain {gap_points:.2} points < 3 (baseline {mean_baseline:.3}, aligned {mean_decan:.3})"
    );
    assert!(
        wins >= 6,
        "aligned model won on only {wins}/{n_subjects} subjects"
    );
    assert_budget("criterion 5", start.elapsed(), 600);
    println!(
        "ACCEPTANCE 5 synthetic-alignment-gain: PASS (baseline {:.1}%, aligned {:.1}%, gap {gap_points:+.1} points, wins {wins}/{n_subjects}, {:.1?})",
        100.0 * mean_baseline,
        100.0 * mean_decan,
        start.elapsed()
    );
}

#[test]
fn criterion_6_one_to_one_generalization() {
    let start = Instant::now();
    let seeds = [11u64, 22, 33, 44, 55];
    let mut deltas = Vec::new();
    for &seed in &seeds {
        let synth = SyntheticConfig {
            seed,
            ..SyntheticConfig::default()
        };
        let (wet, dry) = synthesize_features(
            &synth,
            &decan_core::dsp::DspConfig::default(),
            &FeatureConfig::default(),
        )
        .unwrap();
        let report = run_one_to_one(
            &wet,
            &dry,
            &OneToOneConfig {
                wet_subject: 1,
                test_block: 5,
                band_mask: Band::ALL.to_vec(),
                decan: accepted_decan_config(seed),
                baseline: accepted_baseline_config(seed),
            },
        )
        .unwrap();
        deltas.push(report.mean_delta);
    }
    let mean_delta_points = 100.0 * deltas.iter().sum::<f64>() / deltas.len() as f64;
    assert!(
        mean_delta_points >= 0.0,
        "one-to-one mean accuracy change {mean_delta_points:.2} points < 0"
    );
    assert_budget("criterion 6", start.elapsed(), 600);
    println!(
        "ACCEPTANCE 6 one-to-one-generalization: PASS (mean change {mean_delta_points:+.1} points over {} seeds, {:.1?})",
        seeds.len(),
        start.elapsed()
    );
}

#[test]
fn criterion_7_paired_t_test_golden() {
    let a = [2.0, 4.0, 6.0];
    let b = [1.0, 2.0, 3.0];
    let t = paired_t_test(&a, &b).unwrap();
    assert!((t.t - 3.4641).abs() <= 1e-3, "t = {}", t.t);
    assert!((t.p - 0.0742).abs() <= 1e-3, "p = {}", t.p);
    println!(
        "ACCEPTANCE 7 paired-t-test-golden: PASS (t {:.4}, df {}, p {:.4})",
        t.t, t.df, t.p
    );
}

#[test]
fn criterion_8_determinism() {
    // Library-level rerun of the full pipeline with one config and seed; the
    // serialized reports must be byte-identical. (The CLI test suite repeats
    // this per subcommand at the file level.)
    let synth = SyntheticConfig {
        n_subjects: 2,
        n_blocks: 2,
        trials_per_block: 5,
        trial_seconds: 10.0,
        latent_dim: 2,
        wet_channels: 3,
        dry_channels: 2,
        wet_noise_sigma: 0.2,
        dry_noise_sigma: 3.0,
        seed: 77,
    };
    let run = || {
        let (wet, dry) = synthesize_features(
            &synth,
            &decan_core::dsp::DspConfig::default(),
            &FeatureConfig::default(),
        )
        .unwrap();
        let mut decan_cfg = DecanConfig::new(1, 1);
        decan_cfg.epochs = 30;
        decan_cfg.seed = 5;
        let report = run_experiment(
            &wet,
            &dry,
            &ExperimentConfig {
                scheme: FoldScheme::Lobo,
                model: ModelSpec::Decan,
                band_mask: Band::ALL.to_vec(),
                decan: decan_cfg,
                baseline: BaselineConfig::default(),
                export_latents: true,
            },
        )
        .unwrap();
        serde_json::to_string(&report).unwrap()
    };
    let first = run();
    let second = run();
    assert_eq!(first, second, "rerun produced a different report");
    println!(
        "ACCEPTANCE 8 determinism: PASS (identical {}-byte reports)",
        first.len()
    );
}

/// Criterion 9 needs the real paired recordings converted into the canonical
/// layout; it is environment-dependent and excluded from CI. Point
/// `PADWEED_DIR` at a converted dataset (manifest.json + payloads) and run
/// with `--ignored` to execute it.
#[test]
#[ignore = "requires the real paired dataset; see PADWEED_DIR"]
fn criterion_9_real_data_track() {
    let dir = match std::env::var("PADWEED_DIR") {
        Ok(d) => std::path::PathBuf::from(d),
        Err(_) => {
            println!("ACCEPTANCE 9 real-data-track: SKIPPED (set PADWEED_DIR to run)");
            return;
        }
    };
    let trials = decan_core::data::load_dataset(&dir.join("manifest.json")).unwrap();
    let dsp = decan_core::dsp::DspConfig::default();
    let feat = FeatureConfig::default();
    let processed = decan_core::dsp::preprocess_trials(&trials, &dsp).unwrap();
    let tensors = decan_core::features::extract_all(
        &processed,
        &feat,
        &decan_core::data::LabelSpace::full(),
    )
    .unwrap();
    let (wet, dry): (Vec<_>, Vec<_>) = tensors
        .into_iter()
        .partition(|t| t.device == decan_core::data::DeviceKind::Wet);

    let baseline = run_experiment(
        &[],
        &dry,
        &ExperimentConfig {
            scheme: FoldScheme::Lobo,
            model: ModelSpec::Baseline(BaselineKind::Dnn),
            band_mask: Band::ALL.to_vec(),
            decan: accepted_decan_config(1),
            baseline: accepted_baseline_config(1),
            export_latents: false,
        },
    )
    .unwrap();
    let decan = run_experiment(
        &wet,
        &dry,
        &ExperimentConfig {
            scheme: FoldScheme::Lobo,
            model: ModelSpec::Decan,
            band_mask: Band::ALL.to_vec(),
            decan: accepted_decan_config(1),
            baseline: accepted_baseline_config(1),
            export_latents: false,
        },
    )
    .unwrap();
    let baseline_pct = 100.0 * baseline.accuracy_mean;
    let gap = 100.0 * (decan.accuracy_mean - baseline.accuracy_mean);
    assert!(
        (baseline_pct - 51.44).abs() <= 6.0,
        "dry MLP baseline at {baseline_pct:.2}%, expected 51.44 +- 6"
    );
    assert!(gap >= 1.5, "alignment gap {gap:.2} points < 1.5");
    println!(
        "ACCEPTANCE 9 real-data-track: PASS (baseline {baseline_pct:.2}%, gap {gap:+.2} points)"
    );
}
