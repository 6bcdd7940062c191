//! `featurize`: differential-entropy features per (segment, channel, band),
//! optionally LDS-smoothed, one feature file per trial plus an index.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use decan_core::data::{load_trial, DatasetManifest, LabelSpace};
use decan_core::features::{extract_features, smooth_features, write_feature_file, Band};

use crate::commands::{finish_stage, stage_dir, write_json, FeatureIndex};
use crate::config::RunConfig;

pub fn run_featurize(config: &RunConfig, out: &Path, input: Option<&Path>) -> Result<()> {
    let in_dir: PathBuf = input
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| out.join("preprocess").join("data"));
    let manifest_path = in_dir.join("manifest.json");
    let manifest = DatasetManifest::from_file(&manifest_path)
        .with_context(|| format!("loading {}", manifest_path.display()))?;

    let dir = stage_dir(out, "featurize")?;
    let feat_cfg = config.feature_config();
    let space = LabelSpace::full();
    let hash = config.hash();

    let work: Vec<(u32, decan_core::data::TrialEntry)> = manifest
        .subjects
        .iter()
        .flat_map(|s| s.trials.iter().map(move |t| (s.id, t.clone())))
        .collect();
    let files = decan_core::par::try_map(&work, |(subject, entry)| {
        let trial = load_trial(&in_dir, *subject, entry)?;
        let mut tensor = extract_features(&trial, &Band::ALL, feat_cfg.segment_seconds, &space)?;
        if feat_cfg.smooth {
            smooth_features(&mut tensor, &feat_cfg.lds)?;
        }
        let name = format!(
            "s{:02}_{}_b{}_t{}.feat",
            trial.subject_id, trial.device, trial.block_id, trial.trial_id
        );
        write_feature_file(&tensor, &dir.join(&name), Some(hash.clone()))?;
        Ok::<_, decan_core::Error>(name)
    })
    .context("extracting features")?;

    let mut sorted = files.clone();
    sorted.sort();
    write_json(
        &dir.join("features_manifest.json"),
        &FeatureIndex {
            config_hash: hash,
            files: sorted,
        },
    )?;

    let mut produced = files;
    produced.push("features_manifest.json".into());
    finish_stage(&dir, config, produced)?;
    log::info!("featurize: {} tensors -> {}", work.len(), dir.display());
    Ok(())
}
