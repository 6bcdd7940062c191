//! Subcommand implementations. Every stage writes its artifacts, the fully
//! resolved config, and a manifest of produced files under
//! `<out>/<subcommand>/`; all artifacts embed the resolved-config hash.

mod crossval;
mod eval_cmd;
mod featurize;
mod preprocess;
mod report;
mod synth;
mod train;

pub use crossval::run_crossval;
pub use eval_cmd::run_eval;
pub use featurize::run_featurize;
pub use preprocess::run_preprocess;
pub use report::run_report;
pub use synth::run_synth;
pub use train::run_train;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use decan_core::data::DeviceKind;
use decan_core::features::{read_feature_file, FeatureTensor};

use crate::config::RunConfig;

/// Create (or reuse) the stage directory `<out>/<stage>/`.
pub fn stage_dir(out: &Path, stage: &str) -> Result<PathBuf> {
    let dir = out.join(stage);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).context("serializing artifact")?;
    fs::write(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FilesManifest {
    pub config_hash: String,
    /// Paths relative to the stage directory.
    pub files: Vec<String>,
}

/// Write `files.json` plus `resolved_config.json` for a finished stage.
pub fn finish_stage(
    dir: &Path,
    config: &RunConfig,
    mut produced: Vec<String>,
) -> Result<()> {
    produced.sort();
    produced.push("resolved_config.json".into());
    produced.push("files.json".into());
    write_json(&dir.join("resolved_config.json"), config)?;
    write_json(
        &dir.join("files.json"),
        &FilesManifest {
            config_hash: config.hash(),
            files: produced,
        },
    )?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FeatureIndex {
    pub config_hash: String,
    pub files: Vec<String>,
}

/// Load every tensor listed by a featurize stage, split into (wet, dry).
pub fn load_feature_sets(dir: &Path) -> Result<(Vec<FeatureTensor>, Vec<FeatureTensor>, String)> {
    let index_path = dir.join("features_manifest.json");
    let text = fs::read_to_string(&index_path)
        .with_context(|| format!("reading {}", index_path.display()))?;
    let index: FeatureIndex = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", index_path.display()))?;
    let mut wet = Vec::new();
    let mut dry = Vec::new();
    for file in &index.files {
        let (tensor, hash) = read_feature_file(&dir.join(file))
            .with_context(|| format!("reading feature file {file}"))?;
        if hash.as_deref() != Some(index.config_hash.as_str()) {
            bail!("feature file {file} carries a different config hash than the index");
        }
        match tensor.device {
            DeviceKind::Wet => wet.push(tensor),
            DeviceKind::Dry => dry.push(tensor),
        }
    }
    if wet.is_empty() && dry.is_empty() {
        bail!("no feature tensors found in {}", dir.display());
    }
    Ok((wet, dry, index.config_hash))
}

/// Format a float for CSV output.
pub fn csv_num(v: f64) -> String {
    format!("{v:.6}")
}
