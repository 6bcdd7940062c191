//! `train`: fit one alignment model on the full feature set (intra-subject
//! pairing, all subjects) and write a checkpoint plus the loss history.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use decan_core::decan::{build_pairs, train, DecanModel, PairingStrategy, TrainHistory};
use decan_core::features::Band;

use crate::commands::{finish_stage, load_feature_sets, stage_dir, write_json};
use crate::config::RunConfig;

#[derive(Serialize)]
struct HistoryArtifact<'a> {
    config_hash: String,
    n_pairs: usize,
    stopped_early: bool,
    history: &'a TrainHistory,
}

pub fn run_train(config: &RunConfig, out: &Path, input: Option<&Path>) -> Result<()> {
    let in_dir: PathBuf = input
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| out.join("featurize"));
    let (wet, dry, _) = load_feature_sets(&in_dir)?;
    if wet.is_empty() || dry.is_empty() {
        bail!("training needs both wet and dry feature tensors");
    }

    let dir = stage_dir(out, "train")?;
    let pairs = build_pairs(&wet, &dry, &PairingStrategy::IntraSubject, &Band::ALL)
        .context("building positive pairs")?;
    let n_pairs: usize = pairs.iter().map(|p| p.len()).sum();

    let decan_cfg = config.decan_config(pairs[0].wet.ncols(), pairs[0].dry.ncols())?;
    let mut model = DecanModel::new(decan_cfg).context("building model")?;
    let history = train(&mut model, &pairs).context("training")?;

    model
        .save(&dir.join("model.ckpt"))
        .context("writing checkpoint")?;
    write_json(
        &dir.join("history.json"),
        &HistoryArtifact {
            config_hash: config.hash(),
            n_pairs,
            stopped_early: history.stopped_early,
            history: &history,
        },
    )?;

    finish_stage(
        &dir,
        config,
        vec!["model.ckpt".into(), "history.json".into()],
    )?;
    log::info!(
        "train: {} pairs, {} epochs recorded",
        n_pairs,
        history.epochs.len()
    );
    Ok(())
}
