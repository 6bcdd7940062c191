//! `preprocess`: band-pass, notch, and resample every trial of a dataset to
//! the working rate, writing a new canonical dataset.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use decan_core::data::{load_trial, manifest_from_entries, save_trial, DatasetManifest};
use decan_core::dsp::preprocess_trial;

use crate::commands::{finish_stage, stage_dir};
use crate::config::RunConfig;

pub fn run_preprocess(config: &RunConfig, out: &Path, input: Option<&Path>) -> Result<()> {
    let in_dir: PathBuf = input
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| out.join("synth").join("data"));
    let manifest_path = in_dir.join("manifest.json");
    let manifest = DatasetManifest::from_file(&manifest_path)
        .with_context(|| format!("loading {}", manifest_path.display()))?;

    let dir = stage_dir(out, "preprocess")?;
    let data_dir = dir.join("data");
    std::fs::create_dir_all(&data_dir)?;

    let dsp = config.dsp_config();
    let work: Vec<(u32, decan_core::data::TrialEntry)> = manifest
        .subjects
        .iter()
        .flat_map(|s| s.trials.iter().map(move |t| (s.id, t.clone())))
        .collect();
    let entries = decan_core::par::try_map(&work, |(subject, entry)| {
        let trial = load_trial(&in_dir, *subject, entry)?;
        let processed = preprocess_trial(&trial, &dsp)?;
        Ok::<_, decan_core::Error>((*subject, save_trial(&processed, &data_dir)?))
    })
    .context("preprocessing trials")?;

    let mut produced: Vec<String> = entries
        .iter()
        .map(|(_, e)| format!("data/{}", e.path))
        .collect();
    produced.push("data/manifest.json".into());

    let out_manifest = manifest_from_entries(
        &format!("{}-preprocessed", manifest.dataset_name),
        Some(config.hash()),
        entries,
    );
    out_manifest
        .write(&data_dir.join("manifest.json"))
        .context("writing dataset manifest")?;

    finish_stage(&dir, config, produced)?;
    log::info!("preprocess: {} trials -> {}", work.len(), data_dir.display());
    Ok(())
}
