//! Cross-validation experiment drivers: LOBO/LOSO over baselines and the
//! alignment model, the one-to-one inter-subject pairing protocol, and the
//! contrastive-ablation pair. Folds are independent and run in parallel;
//! results are merged in fold order so reports are schedule-independent.

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{
    compute_metrics, make_folds, train_baseline, BaselineConfig, Fold, FoldScheme, MetricsReport,
};
use crate::data::seed_stream;
use crate::decan::{
    build_pairs, train, DecanConfig, DecanModel, PairingStrategy, SegmentRef,
};
use crate::error::{Error, Result};
use crate::features::{flatten_features, Band, FeatureTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSpec {
    Baseline(super::BaselineKind),
    Decan,
}

impl ModelSpec {
    pub fn name(self) -> String {
        match self {
            ModelSpec::Baseline(kind) => format!("baseline_{}", kind.name()),
            ModelSpec::Decan => "decan".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scheme: FoldScheme,
    pub model: ModelSpec,
    pub band_mask: Vec<Band>,
    pub decan: DecanConfig,
    pub baseline: BaselineConfig,
    pub export_latents: bool,
}

/// Encoder latents of one test fold, for external embedding plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentDump {
    pub refs: Vec<SegmentRef>,
    pub labels: Vec<usize>,
    pub predictions: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub subject: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_block: Option<u32>,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_svm_c: Option<f64>,
    pub metrics: MetricsReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latents: Option<LatentDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSummary {
    pub subject: u32,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub folds: Vec<FoldResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scheme: FoldScheme,
    pub model: ModelSpec,
    pub band_mask: Vec<Band>,
    pub decan_config: DecanConfig,
    pub baseline_config: BaselineConfig,
    pub per_subject: Vec<SubjectSummary>,
    /// Mean and standard deviation of per-subject accuracies.
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub macro_precision_mean: f64,
    pub macro_recall_mean: f64,
    pub macro_f1_mean: f64,
    pub macro_auroc_mean: f64,
    pub macro_auprc_mean: f64,
    /// Confusion counts pooled over every fold.
    pub confusion_total: Vec<Vec<u64>>,
}

/// Stack tensors into one (rows x dim) matrix with labels and segment ids,
/// ordered by segment identity.
fn stack_features(
    tensors: &[&FeatureTensor],
    mask: &[Band],
) -> Result<(Array2<f64>, Vec<usize>, Vec<SegmentRef>)> {
    let mut rows: Vec<(SegmentRef, usize, Vec<f64>)> = Vec::new();
    for tensor in tensors {
        let flat = flatten_features(tensor, mask)?;
        for seg in 0..tensor.n_segments() {
            rows.push((
                SegmentRef {
                    subject: tensor.subject_id,
                    block: tensor.block_id,
                    trial: tensor.trial_id,
                    segment_index: seg,
                },
                tensor.labels[seg],
                flat.row(seg).to_vec(),
            ));
        }
    }
    if rows.is_empty() {
        return Err(Error::Empty("no feature rows".into()));
    }
    rows.sort_by_key(|(r, _, _)| *r);
    let dim = rows[0].2.len();
    let mut x = Array2::zeros((rows.len(), dim));
    let mut labels = Vec::with_capacity(rows.len());
    let mut refs = Vec::with_capacity(rows.len());
    for (i, (r, label, row)) in rows.into_iter().enumerate() {
        x.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
        labels.push(label);
        refs.push(r);
    }
    Ok((x, labels, refs))
}

fn subject_of(t: &FeatureTensor) -> u32 {
    t.subject_id
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn run_fold(
    fold: &Fold,
    wet: &[FeatureTensor],
    dry: &[FeatureTensor],
    cfg: &ExperimentConfig,
) -> Result<FoldResult> {
    let (subject, test_block, dry_train, dry_test, wet_train): (
        u32,
        Option<u32>,
        Vec<&FeatureTensor>,
        Vec<&FeatureTensor>,
        Vec<&FeatureTensor>,
    ) = match fold {
        Fold::Lobo {
            subject,
            test_block,
            train_blocks,
        } => (
            *subject,
            Some(*test_block),
            dry.iter()
                .filter(|t| t.subject_id == *subject && train_blocks.contains(&t.block_id))
                .collect(),
            dry.iter()
                .filter(|t| t.subject_id == *subject && t.block_id == *test_block)
                .collect(),
            wet.iter()
                .filter(|t| t.subject_id == *subject && train_blocks.contains(&t.block_id))
                .collect(),
        ),
        Fold::Loso {
            test_subject,
            train_subjects,
        } => (
            *test_subject,
            None,
            dry.iter()
                .filter(|t| train_subjects.contains(&t.subject_id))
                .collect(),
            dry.iter().filter(|t| t.subject_id == *test_subject).collect(),
            wet.iter()
                .filter(|t| train_subjects.contains(&t.subject_id))
                .collect(),
        ),
    };

    let (x_test, y_test, refs_test) = stack_features(&dry_test, &cfg.band_mask)?;
    let fold_seed = seed_stream(
        cfg.decan.seed,
        &[0xF0_1D, subject as u64, test_block.unwrap_or(0) as u64],
    );

    match cfg.model {
        ModelSpec::Baseline(kind) => {
            let (x_train, y_train, _) = stack_features(&dry_train, &cfg.band_mask)?;
            let mut bl_cfg = cfg.baseline.clone();
            bl_cfg.kind = kind;
            bl_cfg.seed = fold_seed;
            let model = train_baseline(&x_train, &y_train, cfg.decan.n_classes, &bl_cfg)?;
            let (predictions, scores) = model.predict(&x_test)?;
            let metrics = compute_metrics(&predictions, &scores, &y_test)?;
            Ok(FoldResult {
                subject,
                test_block,
                n_train: y_train.len(),
                n_test: y_test.len(),
                chosen_svm_c: model.chosen_svm_c,
                metrics,
                latents: None,
            })
        }
        ModelSpec::Decan => {
            let wet_owned: Vec<FeatureTensor> = wet_train.into_iter().cloned().collect();
            let dry_owned: Vec<FeatureTensor> = dry_train.into_iter().cloned().collect();
            let pairs = build_pairs(
                &wet_owned,
                &dry_owned,
                &PairingStrategy::IntraSubject,
                &cfg.band_mask,
            )?;
            let n_train = pairs.iter().map(|p| p.len()).sum();
            let mut decan_cfg = cfg.decan.clone();
            decan_cfg.wet_input_dim = pairs[0].wet.ncols();
            decan_cfg.dry_input_dim = pairs[0].dry.ncols();
            decan_cfg.seed = fold_seed;
            let mut model = DecanModel::new(decan_cfg)?;
            train(&mut model, &pairs)?;
            let out = model.predict_dry(&x_test)?;
            let metrics = compute_metrics(&out.predictions, &out.probabilities, &y_test)?;
            let latents = cfg.export_latents.then(|| LatentDump {
                refs: refs_test,
                labels: y_test.clone(),
                predictions: out.predictions.clone(),
                rows: out.latents.rows().into_iter().map(|r| r.to_vec()).collect(),
            });
            Ok(FoldResult {
                subject,
                test_block,
                n_train,
                n_test: y_test.len(),
                chosen_svm_c: None,
                metrics,
                latents,
            })
        }
    }
}

/// Run one full cross-validation experiment.
pub fn run_experiment(
    wet: &[FeatureTensor],
    dry: &[FeatureTensor],
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport> {
    if dry.is_empty() {
        return Err(Error::Empty("no dry feature tensors".into()));
    }
    if cfg.model == ModelSpec::Decan && wet.is_empty() {
        return Err(Error::Empty("the alignment model needs wet tensors".into()));
    }
    if cfg.band_mask.is_empty() {
        return Err(Error::InvalidArgument("band mask is empty".into()));
    }
    let keys: Vec<(u32, u32)> = {
        let set: BTreeSet<(u32, u32)> = dry.iter().map(|t| (t.subject_id, t.block_id)).collect();
        set.into_iter().collect()
    };
    let plan = make_folds(&keys, cfg.scheme)?;
    let fold_results = crate::par::try_map(&plan.folds, |fold| run_fold(fold, wet, dry, cfg))?;

    let subjects: BTreeSet<u32> = fold_results.iter().map(|f| f.subject).collect();
    let mut per_subject = Vec::new();
    for subject in subjects {
        let folds: Vec<FoldResult> = fold_results
            .iter()
            .filter(|f| f.subject == subject)
            .cloned()
            .collect();
        let accs: Vec<f64> = folds.iter().map(|f| f.metrics.accuracy).collect();
        let (accuracy_mean, accuracy_std) = mean_std(&accs);
        per_subject.push(SubjectSummary {
            subject,
            accuracy_mean,
            accuracy_std,
            folds,
        });
    }

    let subject_accs: Vec<f64> = per_subject.iter().map(|s| s.accuracy_mean).collect();
    let (accuracy_mean, accuracy_std) = mean_std(&subject_accs);
    let fold_mean = |f: &dyn Fn(&MetricsReport) -> f64| -> f64 {
        let vals: Vec<f64> = fold_results.iter().map(|r| f(&r.metrics)).collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    let k = cfg.decan.n_classes;
    let mut confusion_total = vec![vec![0u64; k]; k];
    for r in &fold_results {
        for (row, total_row) in r.metrics.confusion.iter().zip(&mut confusion_total) {
            for (v, t) in row.iter().zip(total_row.iter_mut()) {
                *t += v;
            }
        }
    }

    Ok(ExperimentReport {
        scheme: cfg.scheme,
        model: cfg.model,
        band_mask: cfg.band_mask.clone(),
        decan_config: cfg.decan.clone(),
        baseline_config: cfg.baseline.clone(),
        per_subject,
        accuracy_mean,
        accuracy_std,
        macro_precision_mean: fold_mean(&|m| m.macro_precision),
        macro_recall_mean: fold_mean(&|m| m.macro_recall),
        macro_f1_mean: fold_mean(&|m| m.macro_f1),
        macro_auroc_mean: fold_mean(&|m| m.macro_auroc),
        macro_auprc_mean: fold_mean(&|m| m.macro_auprc),
        confusion_total,
    })
}

/// Run the contrastive ablation: identical seeds and configuration, with and
/// without the alignment term. The reports echo their configs so the diff is
/// auditable.
pub fn run_ablation_pair(
    wet: &[FeatureTensor],
    dry: &[FeatureTensor],
    cfg: &ExperimentConfig,
) -> Result<(ExperimentReport, ExperimentReport)> {
    let mut with_cl = cfg.clone();
    with_cl.model = ModelSpec::Decan;
    with_cl.decan.use_contrastive = true;
    let mut without_cl = with_cl.clone();
    without_cl.decan.use_contrastive = false;
    Ok((
        run_experiment(wet, dry, &with_cl)?,
        run_experiment(wet, dry, &without_cl)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneToOneConfig {
    /// The single subject whose wet recordings assist everyone else.
    pub wet_subject: u32,
    /// Held-out block per dry subject.
    pub test_block: u32,
    pub band_mask: Vec<Band>,
    pub decan: DecanConfig,
    pub baseline: BaselineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneToOneSubject {
    pub subject: u32,
    pub decan_accuracy: f64,
    pub baseline_accuracy: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneToOneReport {
    pub wet_subject: u32,
    pub test_block: u32,
    pub per_subject: Vec<OneToOneSubject>,
    pub mean_delta: f64,
}

/// One-to-one inter-subject pairing: one subject's wet data is rank-matched
/// to every other subject's dry training segments; each dry subject is then
/// tested on its held-out block against its own dry-only baseline.
pub fn run_one_to_one(
    wet: &[FeatureTensor],
    dry: &[FeatureTensor],
    cfg: &OneToOneConfig,
) -> Result<OneToOneReport> {
    let wet_train: Vec<FeatureTensor> = wet
        .iter()
        .filter(|t| t.subject_id == cfg.wet_subject && t.block_id != cfg.test_block)
        .cloned()
        .collect();
    if wet_train.is_empty() {
        return Err(Error::Empty(format!(
            "wet subject {} has no training blocks",
            cfg.wet_subject
        )));
    }
    let subjects: Vec<u32> = {
        let set: BTreeSet<u32> = dry
            .iter()
            .map(subject_of)
            .filter(|&s| s != cfg.wet_subject)
            .collect();
        set.into_iter().collect()
    };
    if subjects.is_empty() {
        return Err(Error::Empty("no dry subjects besides the wet anchor".into()));
    }

    let per_subject = crate::par::try_map(&subjects, |&subject| -> Result<OneToOneSubject> {
        let dry_train: Vec<FeatureTensor> = dry
            .iter()
            .filter(|t| t.subject_id == subject && t.block_id != cfg.test_block)
            .cloned()
            .collect();
        let dry_test: Vec<&FeatureTensor> = dry
            .iter()
            .filter(|t| t.subject_id == subject && t.block_id == cfg.test_block)
            .collect();
        let (x_test, y_test, _) = stack_features(&dry_test, &cfg.band_mask)?;
        let fold_seed = seed_stream(cfg.decan.seed, &[0x121, subject as u64]);

        let pairs = build_pairs(
            &wet_train,
            &dry_train,
            &PairingStrategy::InterSubjectOneToOne {
                wet_subject: cfg.wet_subject,
            },
            &cfg.band_mask,
        )?;
        let mut decan_cfg = cfg.decan.clone();
        decan_cfg.wet_input_dim = pairs[0].wet.ncols();
        decan_cfg.dry_input_dim = pairs[0].dry.ncols();
        decan_cfg.seed = fold_seed;
        let mut model = DecanModel::new(decan_cfg)?;
        train(&mut model, &pairs)?;
        let out = model.predict_dry(&x_test)?;
        let decan_accuracy = compute_metrics(&out.predictions, &out.probabilities, &y_test)?.accuracy;

        let train_refs: Vec<&FeatureTensor> = dry_train.iter().collect();
        let (x_train, y_train, _) = stack_features(&train_refs, &cfg.band_mask)?;
        let mut bl_cfg = cfg.baseline.clone();
        bl_cfg.seed = fold_seed;
        let baseline = train_baseline(&x_train, &y_train, cfg.decan.n_classes, &bl_cfg)?;
        let (bl_pred, bl_scores) = baseline.predict(&x_test)?;
        let baseline_accuracy = compute_metrics(&bl_pred, &bl_scores, &y_test)?.accuracy;

        Ok(OneToOneSubject {
            subject,
            decan_accuracy,
            baseline_accuracy,
            delta: decan_accuracy - baseline_accuracy,
        })
    })?;

    let mean_delta =
        per_subject.iter().map(|s| s.delta).sum::<f64>() / per_subject.len() as f64;
    Ok(OneToOneReport {
        wet_subject: cfg.wet_subject,
        test_block: cfg.test_block,
        per_subject,
        mean_delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DeviceKind;
    use ndarray::Array3;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Fabricated feature tensors with class-dependent means; dry features are
    /// noisier than wet ones.
    fn toy_features(
        n_subjects: u32,
        n_blocks: u32,
        channels: usize,
        noise: f64,
        seed: u64,
    ) -> Vec<FeatureTensor> {
        let mut out = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for subject in 1..=n_subjects {
            for block in 1..=n_blocks {
                for trial in 1..=5u32 {
                    let label = ((block + trial) % 5) as usize;
                    let segments = 4;
                    let values = Array3::from_shape_fn((segments, channels, 5), |(_, _, b)| {
                        label as f64 * 0.8 + b as f64 * 0.1 + noise * rng.random_range(-1.0..1.0)
                    });
                    out.push(FeatureTensor {
                        values,
                        subject_id: subject,
                        block_id: block,
                        trial_id: trial,
                        device: if noise > 0.3 { DeviceKind::Dry } else { DeviceKind::Wet },
                        labels: vec![label; segments],
                        bands: Band::ALL.to_vec(),
                        smoothed: false,
                    });
                }
            }
        }
        out
    }

    fn quick_experiment_config(model: ModelSpec) -> ExperimentConfig {
        let mut decan = DecanConfig::new(1, 1);
        decan.hidden = [16, 12, 8];
        decan.projector_hidden = 64;
        decan.projector_out = 8;
        decan.epochs = 30;
        decan.seed = 3;
        let baseline = BaselineConfig {
            hidden: vec![12, 8],
            epochs: 60,
            ..BaselineConfig::default()
        };
        ExperimentConfig {
            scheme: FoldScheme::Lobo,
            model,
            band_mask: Band::ALL.to_vec(),
            decan,
            baseline,
            export_latents: false,
        }
    }

    #[test]
    fn lobo_baseline_report_shape() {
        let dry = toy_features(2, 3, 3, 0.4, 5);
        let cfg = quick_experiment_config(ModelSpec::Baseline(super::super::BaselineKind::Dnn));
        let report = run_experiment(&[], &dry, &cfg).unwrap();
        assert_eq!(report.per_subject.len(), 2);
        for s in &report.per_subject {
            assert_eq!(s.folds.len(), 3, "one fold per block");
            for f in &s.folds {
                assert!(f.test_block.is_some());
                assert_eq!(f.n_test, 5 * 4);
            }
        }
        let pooled: u64 = report.confusion_total.iter().flatten().sum();
        assert_eq!(pooled as usize, 2 * 3 * 5 * 4);
    }

    #[test]
    fn decan_lobo_runs_and_exports_latents() {
        let wet = toy_features(2, 3, 4, 0.1, 6);
        let dry = toy_features(2, 3, 2, 0.5, 7);
        let mut cfg = quick_experiment_config(ModelSpec::Decan);
        cfg.export_latents = true;
        let report = run_experiment(&wet, &dry, &cfg).unwrap();
        for s in &report.per_subject {
            for f in &s.folds {
                let latents = f.latents.as_ref().expect("latents exported");
                assert_eq!(latents.rows.len(), f.n_test);
                assert_eq!(latents.rows[0].len(), cfg.decan.hidden[2]);
                assert_eq!(f.n_train, 2 * 5 * 4); // 2 train blocks
            }
        }
    }

    #[test]
    fn experiments_are_deterministic() {
        let wet = toy_features(2, 2, 3, 0.1, 8);
        let dry = toy_features(2, 2, 2, 0.5, 9);
        let cfg = quick_experiment_config(ModelSpec::Decan);
        let a = run_experiment(&wet, &dry, &cfg).unwrap();
        let b = run_experiment(&wet, &dry, &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn ablation_pair_differs_only_in_contrastive_flag() {
        let wet = toy_features(1, 2, 3, 0.1, 10);
        let dry = toy_features(1, 2, 2, 0.5, 11);
        let cfg = quick_experiment_config(ModelSpec::Decan);
        let (with_cl, without_cl) = run_ablation_pair(&wet, &dry, &cfg).unwrap();
        assert!(with_cl.decan_config.use_contrastive);
        assert!(!without_cl.decan_config.use_contrastive);
        let mut a = with_cl.decan_config.clone();
        let mut b = without_cl.decan_config.clone();
        a.use_contrastive = false;
        b.use_contrastive = false;
        assert_eq!(a, b, "configs differ beyond the ablation switch");
    }

    #[test]
    fn one_to_one_covers_all_other_subjects() {
        let wet = toy_features(3, 3, 4, 0.1, 12);
        let dry = toy_features(3, 3, 2, 0.5, 13);
        let cfg = OneToOneConfig {
            wet_subject: 1,
            test_block: 3,
            band_mask: Band::ALL.to_vec(),
            decan: quick_experiment_config(ModelSpec::Decan).decan,
            baseline: BaselineConfig {
                hidden: vec![12, 8],
                epochs: 60,
                ..BaselineConfig::default()
            },
        };
        let report = run_one_to_one(&wet, &dry, &cfg).unwrap();
        let subjects: Vec<u32> = report.per_subject.iter().map(|s| s.subject).collect();
        assert_eq!(subjects, vec![2, 3]);
        for s in &report.per_subject {
            assert!((s.delta - (s.decan_accuracy - s.baseline_accuracy)).abs() < 1e-12);
        }
    }
}
