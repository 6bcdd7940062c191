//! `report`: aggregate one or more crossval outputs into summary tables and
//! paired significance tests. Refuses inputs with mismatched config hashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use decan_core::eval::{paired_t_test, ExperimentReport, OneToOneReport};

use crate::commands::{csv_num, finish_stage, stage_dir, write_json};
use crate::config::RunConfig;

#[derive(Deserialize)]
struct CrossvalReportIn {
    config_hash: String,
    experiments: Vec<ExperimentEntryIn>,
    #[serde(default)]
    ablation: Option<AblationIn>,
    #[serde(default)]
    one_to_one: Option<OneToOneReport>,
}

#[derive(Deserialize)]
struct ExperimentEntryIn {
    model: String,
    band_mask: String,
    report: ExperimentReport,
}

#[derive(Deserialize)]
struct AblationIn {
    with_contrastive: ExperimentReport,
    without_contrastive: ExperimentReport,
}

#[derive(Serialize)]
struct SummaryRow {
    model: String,
    band_mask: String,
    accuracy_mean: f64,
    accuracy_std: f64,
    macro_f1_mean: f64,
    macro_auroc_mean: f64,
    macro_auprc_mean: f64,
}

#[derive(Serialize)]
struct SignificanceRow {
    band_mask: String,
    comparison: String,
    t: f64,
    df: f64,
    p: f64,
}

#[derive(Serialize)]
struct Summary {
    config_hash: String,
    rows: Vec<SummaryRow>,
    significance: Vec<SignificanceRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ablation_gain: Option<AblationGain>,
    #[serde(skip_serializing_if = "Option::is_none")]
    one_to_one_mean_delta: Option<f64>,
}

#[derive(Serialize)]
struct AblationGain {
    accuracy_with: f64,
    accuracy_without: f64,
    subjects_improved: usize,
    subjects_total: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    t_test_p: Option<f64>,
}

pub fn run_report(config: &RunConfig, out: &Path, from: &[PathBuf]) -> Result<()> {
    let sources: Vec<PathBuf> = if from.is_empty() {
        vec![out.join("crossval")]
    } else {
        from.to_vec()
    };

    let mut reports = Vec::new();
    for src in &sources {
        let path = src.join("report.json");
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        let report: CrossvalReportIn =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        reports.push((src.clone(), report));
    }
    let first_hash = reports[0].1.config_hash.clone();
    let mismatched: Vec<String> = reports
        .iter()
        .filter(|(_, r)| r.config_hash != first_hash)
        .map(|(p, r)| format!("{} (hash {})", p.display(), r.config_hash))
        .collect();
    if !mismatched.is_empty() {
        bail!(
            "refusing mixed config hashes; expected {first_hash}, got:\n  {}",
            mismatched.join("\n  ")
        );
    }

    let dir = stage_dir(out, "report")?;
    let mut rows = Vec::new();
    // (band_mask, model) -> per-subject accuracies, for t-tests
    let mut per_subject: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for (_, report) in &reports {
        for entry in &report.experiments {
            rows.push(SummaryRow {
                model: entry.model.clone(),
                band_mask: entry.band_mask.clone(),
                accuracy_mean: entry.report.accuracy_mean,
                accuracy_std: entry.report.accuracy_std,
                macro_f1_mean: entry.report.macro_f1_mean,
                macro_auroc_mean: entry.report.macro_auroc_mean,
                macro_auprc_mean: entry.report.macro_auprc_mean,
            });
            per_subject.insert(
                (entry.band_mask.clone(), entry.model.clone()),
                entry
                    .report
                    .per_subject
                    .iter()
                    .map(|s| s.accuracy_mean)
                    .collect(),
            );
        }
    }
    rows.sort_by(|a, b| (&a.band_mask, &a.model).cmp(&(&b.band_mask, &b.model)));

    let mut significance = Vec::new();
    for ((mask, model), accs) in &per_subject {
        if model == "decan" {
            continue;
        }
        if let Some(decan_accs) = per_subject.get(&(mask.clone(), "decan".to_string())) {
            if decan_accs.len() == accs.len() {
                match paired_t_test(decan_accs, accs) {
                    Ok(t) => significance.push(SignificanceRow {
                        band_mask: mask.clone(),
                        comparison: format!("decan_vs_{model}"),
                        t: t.t,
                        df: t.df,
                        p: t.p,
                    }),
                    Err(e) => log::warn!("t-test decan vs {model} ({mask}): {e}"),
                }
            }
        }
    }

    let ablation_gain = reports.iter().find_map(|(_, r)| r.ablation.as_ref()).map(|a| {
        let with_accs: Vec<f64> = a
            .with_contrastive
            .per_subject
            .iter()
            .map(|s| s.accuracy_mean)
            .collect();
        let without_accs: Vec<f64> = a
            .without_contrastive
            .per_subject
            .iter()
            .map(|s| s.accuracy_mean)
            .collect();
        let improved = with_accs
            .iter()
            .zip(&without_accs)
            .filter(|(w, wo)| w > wo)
            .count();
        AblationGain {
            accuracy_with: a.with_contrastive.accuracy_mean,
            accuracy_without: a.without_contrastive.accuracy_mean,
            subjects_improved: improved,
            subjects_total: with_accs.len(),
            t_test_p: paired_t_test(&with_accs, &without_accs).ok().map(|t| t.p),
        }
    });

    let one_to_one_mean_delta = reports
        .iter()
        .find_map(|(_, r)| r.one_to_one.as_ref())
        .map(|o| o.mean_delta);

    let summary = Summary {
        config_hash: first_hash,
        rows,
        significance,
        ablation_gain,
        one_to_one_mean_delta,
    };
    write_json(&dir.join("summary.json"), &summary)?;

    let mut csv =
        String::from("band_mask,model,accuracy_mean,accuracy_std,macro_f1_mean,macro_auroc_mean,macro_auprc_mean\n");
    for r in &summary.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.band_mask,
            r.model,
            csv_num(r.accuracy_mean),
            csv_num(r.accuracy_std),
            csv_num(r.macro_f1_mean),
            csv_num(r.macro_auroc_mean),
            csv_num(r.macro_auprc_mean)
        ));
    }
    std::fs::write(dir.join("summary.csv"), csv)?;

    finish_stage(
        &dir,
        config,
        vec!["summary.json".into(), "summary.csv".into()],
    )?;
    log::info!("report: summary at {}", dir.join("summary.json").display());
    Ok(())
}
