//! `eval`: score a trained checkpoint on a feature set's dry tensors and
//! export metrics, per-segment predictions, and encoder latents.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ndarray::Array2;
use serde::Serialize;

use decan_core::decan::DecanModel;
use decan_core::eval::{compute_metrics, MetricsReport};
use decan_core::features::{flatten_features, Band};

use crate::commands::{csv_num, finish_stage, load_feature_sets, stage_dir, write_json};
use crate::config::RunConfig;

#[derive(Serialize)]
struct EvalArtifact {
    config_hash: String,
    n_segments: usize,
    metrics: MetricsReport,
}

#[derive(Serialize)]
struct EvalLatents {
    config_hash: String,
    labels: Vec<usize>,
    predictions: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

pub fn run_eval(
    config: &RunConfig,
    out: &Path,
    model_path: Option<&Path>,
    input: Option<&Path>,
) -> Result<()> {
    let in_dir: PathBuf = input
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| out.join("featurize"));
    let ckpt: PathBuf = model_path
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| out.join("train").join("model.ckpt"));
    let (_, dry, _) = load_feature_sets(&in_dir)?;
    if dry.is_empty() {
        bail!("no dry tensors to evaluate");
    }
    let model = DecanModel::load(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let dir = stage_dir(out, "eval")?;

    // Stack all dry segments, ordered by identity.
    let mut rows: Vec<(u32, u32, u32, usize, usize, Vec<f64>)> = Vec::new();
    for tensor in &dry {
        let flat = flatten_features(tensor, &Band::ALL)?;
        for seg in 0..tensor.n_segments() {
            rows.push((
                tensor.subject_id,
                tensor.block_id,
                tensor.trial_id,
                seg,
                tensor.labels[seg],
                flat.row(seg).to_vec(),
            ));
        }
    }
    rows.sort_by(|a, b| (a.0, a.1, a.2, a.3).cmp(&(b.0, b.1, b.2, b.3)));
    let dim = rows[0].5.len();
    let mut x = Array2::zeros((rows.len(), dim));
    for (i, row) in rows.iter().enumerate() {
        x.row_mut(i).assign(&ndarray::ArrayView1::from(&row.5));
    }
    let labels: Vec<usize> = rows.iter().map(|r| r.4).collect();

    let prediction = model.predict_dry(&x).context("running dry inference")?;
    let metrics = compute_metrics(&prediction.predictions, &prediction.probabilities, &labels)?;

    write_json(
        &dir.join("metrics.json"),
        &EvalArtifact {
            config_hash: config.hash(),
            n_segments: labels.len(),
            metrics,
        },
    )?;

    let k = prediction.probabilities.ncols();
    let mut csv = String::from("subject,block,trial,segment,label,prediction");
    for c in 0..k {
        csv.push_str(&format!(",p{c}"));
    }
    csv.push('\n');
    for (i, row) in rows.iter().enumerate() {
        csv.push_str(&format!(
            "{},{},{},{},{},{}",
            row.0, row.1, row.2, row.3, row.4, prediction.predictions[i]
        ));
        for c in 0..k {
            csv.push_str(&format!(",{}", csv_num(prediction.probabilities[[i, c]])));
        }
        csv.push('\n');
    }
    std::fs::write(dir.join("predictions.csv"), csv)?;

    write_json(
        &dir.join("latents.json"),
        &EvalLatents {
            config_hash: config.hash(),
            labels,
            predictions: prediction.predictions.clone(),
            rows: prediction
                .latents
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
        },
    )?;

    finish_stage(
        &dir,
        config,
        vec![
            "metrics.json".into(),
            "predictions.csv".into(),
            "latents.json".into(),
        ],
    )?;
    log::info!("eval: scored {} segments", rows.len());
    Ok(())
}
