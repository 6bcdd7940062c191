//! `crossval`: cross-validation experiments over the requested models and
//! band masks, optional contrastive ablation and one-to-one protocol.
//! Emits a full JSON report, CSV tables, and latent exports.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use decan_core::eval::{
    run_ablation_pair, run_experiment, run_one_to_one, ExperimentConfig, ExperimentReport,
    ModelSpec, OneToOneConfig, OneToOneReport,
};
use decan_core::features::Band;

use crate::commands::{csv_num, finish_stage, load_feature_sets, stage_dir, write_json};
use crate::config::RunConfig;

#[derive(Serialize)]
struct CrossvalReport {
    config_hash: String,
    experiments: Vec<ExperimentEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ablation: Option<AblationEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    one_to_one: Option<OneToOneReport>,
}

#[derive(Serialize)]
struct ExperimentEntry {
    model: String,
    band_mask: String,
    report: ExperimentReport,
}

#[derive(Serialize)]
struct AblationEntry {
    with_contrastive: ExperimentReport,
    without_contrastive: ExperimentReport,
}

#[derive(Serialize)]
struct LatentsArtifact {
    config_hash: String,
    experiments: Vec<LatentExperiment>,
}

#[derive(Serialize)]
struct LatentExperiment {
    model: String,
    band_mask: String,
    folds: Vec<decan_core::eval::LatentDump>,
}

fn strip_latents(report: &mut ExperimentReport) -> Vec<decan_core::eval::LatentDump> {
    let mut dumps = Vec::new();
    for subject in &mut report.per_subject {
        for fold in &mut subject.folds {
            if let Some(latents) = fold.latents.take() {
                dumps.push(latents);
            }
        }
    }
    dumps
}

pub fn run_crossval(config: &RunConfig, out: &Path, input: Option<&Path>) -> Result<()> {
    let in_dir: PathBuf = input
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| out.join("featurize"));
    let (wet, dry, _) = load_feature_sets(&in_dir)?;
    let dir = stage_dir(out, "crossval")?;

    let scheme = config.fold_scheme()?;
    let models = config.eval_models()?;
    let masks = config.band_masks()?;
    let decan_cfg = config.decan_config(1, 1)?;
    let baseline_cfg = config.baseline_config(decan_core::eval::BaselineKind::Dnn);

    let mut experiments = Vec::new();
    let mut latent_exports = Vec::new();
    for model in &models {
        for (mask_name, mask) in &masks {
            let exp_cfg = ExperimentConfig {
                scheme,
                model: *model,
                band_mask: mask.clone(),
                decan: decan_cfg.clone(),
                baseline: baseline_cfg.clone(),
                export_latents: config.eval.export_latents && *model == ModelSpec::Decan,
            };
            log::info!("crossval: running {} / {}", model.name(), mask_name);
            let mut report = run_experiment(&wet, &dry, &exp_cfg)
                .with_context(|| format!("experiment {} / {}", model.name(), mask_name))?;
            let dumps = strip_latents(&mut report);
            if !dumps.is_empty() {
                latent_exports.push(LatentExperiment {
                    model: model.name(),
                    band_mask: mask_name.clone(),
                    folds: dumps,
                });
            }
            experiments.push(ExperimentEntry {
                model: model.name(),
                band_mask: mask_name.clone(),
                report,
            });
        }
    }

    let ablation = if config.eval.ablation {
        let exp_cfg = ExperimentConfig {
            scheme,
            model: ModelSpec::Decan,
            band_mask: Band::ALL.to_vec(),
            decan: decan_cfg.clone(),
            baseline: baseline_cfg.clone(),
            export_latents: false,
        };
        log::info!("crossval: running contrastive ablation pair");
        let (mut with_cl, mut without_cl) =
            run_ablation_pair(&wet, &dry, &exp_cfg).context("ablation pair")?;
        strip_latents(&mut with_cl);
        strip_latents(&mut without_cl);
        Some(AblationEntry {
            with_contrastive: with_cl,
            without_contrastive: without_cl,
        })
    } else {
        None
    };

    let one_to_one = if config.eval.one_to_one {
        let cfg = OneToOneConfig {
            wet_subject: config.eval.one_to_one_wet_subject,
            test_block: config.eval.one_to_one_test_block,
            band_mask: Band::ALL.to_vec(),
            decan: decan_cfg.clone(),
            baseline: baseline_cfg.clone(),
        };
        log::info!("crossval: running one-to-one protocol");
        Some(run_one_to_one(&wet, &dry, &cfg).context("one-to-one protocol")?)
    } else {
        None
    };

    let report = CrossvalReport {
        config_hash: config.hash(),
        experiments,
        ablation,
        one_to_one,
    };
    write_json(&dir.join("report.json"), &report)?;

    let mut produced = vec![
        "report.json".into(),
        "per_subject_accuracy.csv".into(),
        "confusion_matrix.csv".into(),
        "per_band_accuracy.csv".into(),
    ];

    // CSV tables for external plotting.
    let mut per_subject = String::from("model,band_mask,subject,accuracy_mean,accuracy_std\n");
    let mut confusion = String::from("model,band_mask,true_class,predicted_class,count\n");
    let mut per_band = String::from("model,band_mask,accuracy_mean,accuracy_std\n");
    for entry in &report.experiments {
        for s in &entry.report.per_subject {
            per_subject.push_str(&format!(
                "{},{},{},{},{}\n",
                entry.model,
                entry.band_mask,
                s.subject,
                csv_num(s.accuracy_mean),
                csv_num(s.accuracy_std)
            ));
        }
        for (t, row) in entry.report.confusion_total.iter().enumerate() {
            for (p, count) in row.iter().enumerate() {
                confusion.push_str(&format!(
                    "{},{},{t},{p},{count}\n",
                    entry.model, entry.band_mask
                ));
            }
        }
        per_band.push_str(&format!(
            "{},{},{},{}\n",
            entry.model,
            entry.band_mask,
            csv_num(entry.report.accuracy_mean),
            csv_num(entry.report.accuracy_std)
        ));
    }
    std::fs::write(dir.join("per_subject_accuracy.csv"), per_subject)?;
    std::fs::write(dir.join("confusion_matrix.csv"), confusion)?;
    std::fs::write(dir.join("per_band_accuracy.csv"), per_band)?;

    if !latent_exports.is_empty() {
        write_json(
            &dir.join("latents.json"),
            &LatentsArtifact {
                config_hash: config.hash(),
                experiments: latent_exports,
            },
        )?;
        produced.push("latents.json".into());
    }

    finish_stage(&dir, config, produced)?;
    log::info!("crossval: report at {}", dir.join("report.json").display());
    Ok(())
}
