//! `synth`: generate the paired synthetic dataset in the canonical on-disk
//! layout (JSON manifest + per-trial float32 payloads).

use std::path::Path;

use anyhow::{Context, Result};

use decan_core::data::{generate_trial_pair, manifest_from_entries, save_trial, trial_keys};

use crate::commands::{finish_stage, stage_dir};
use crate::config::RunConfig;

pub fn run_synth(config: &RunConfig, out: &Path) -> Result<()> {
    let dir = stage_dir(out, "synth")?;
    let data_dir = dir.join("data");
    std::fs::create_dir_all(&data_dir)?;

    let synth = config.synthetic_config();
    let keys = trial_keys(&synth);
    // One trial pair in flight per worker; payloads stream straight to disk.
    let entries = decan_core::par::try_map(&keys, |&(s, b, t)| {
        let (wet, dry) = generate_trial_pair(&synth, s, b, t)?;
        Ok::<_, decan_core::Error>(vec![
            (s, save_trial(&wet, &data_dir)?),
            (s, save_trial(&dry, &data_dir)?),
        ])
    })
    .context("generating synthetic trials")?;
    let entries: Vec<_> = entries.into_iter().flatten().collect();

    let mut produced: Vec<String> = entries
        .iter()
        .map(|(_, e)| format!("data/{}", e.path))
        .collect();
    produced.push("data/manifest.json".into());

    let manifest = manifest_from_entries("synthetic", Some(config.hash()), entries);
    manifest
        .write(&data_dir.join("manifest.json"))
        .context("writing dataset manifest")?;

    finish_stage(&dir, config, produced)?;
    log::info!(
        "synth: wrote {} trials to {}",
        manifest.subjects.iter().map(|s| s.trials.len()).sum::<usize>(),
        data_dir.display()
    );
    Ok(())
}
