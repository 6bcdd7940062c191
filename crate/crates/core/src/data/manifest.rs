//! On-disk dataset layout: a JSON manifest plus one raw little-endian float32
//! channel-major payload file per trial.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{DeviceKind, EmotionLabel, RawTrial};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialEntry {
    pub path: String,
    pub device: DeviceKind,
    pub block: u32,
    pub trial: u32,
    pub label: EmotionLabel,
    pub sample_rate_hz: f64,
    pub channel_count: usize,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectEntry {
    pub id: u32,
    pub trials: Vec<TrialEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub dataset_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub subjects: Vec<SubjectEntry>,
}

impl DatasetManifest {
    pub fn from_file(path: &Path) -> Result<DatasetManifest> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Malformed {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text.as_bytes()).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

fn read_payload(path: &Path, channels: usize, samples: usize) -> Result<Array2<f64>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.display().to_string()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let expected = (channels * samples * 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: path.display().to_string(),
            expected,
            found: bytes.len() as u64,
        });
    }
    let mut data = Array2::<f64>::zeros((channels, samples));
    for ch in 0..channels {
        for i in 0..samples {
            let off = (ch * samples + i) * 4;
            let v = f32::from_le_bytes([
                bytes[off],
                bytes[off + 1],
                bytes[off + 2],
                bytes[off + 3],
            ]);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{} (channel {ch}, sample {i})",
                    path.display()
                )));
            }
            data[[ch, i]] = f64::from(v);
        }
    }
    Ok(data)
}

fn write_payload(path: &Path, data: &Array2<f64>) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for row in data.rows() {
        for &v in row {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, &bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Load one manifest entry's trial.
pub fn load_trial(base_dir: &Path, subject_id: u32, entry: &TrialEntry) -> Result<RawTrial> {
    let data = read_payload(
        &base_dir.join(&entry.path),
        entry.channel_count,
        entry.sample_count,
    )?;
    RawTrial::new(
        subject_id,
        entry.block,
        entry.trial,
        entry.device,
        entry.label,
        entry.sample_rate_hz,
        data,
    )
}

/// Write one trial's payload into `dir` under the canonical file name and
/// return its manifest entry.
pub fn save_trial(trial: &RawTrial, dir: &Path) -> Result<TrialEntry> {
    let rel = format!(
        "s{:02}_{}_b{}_t{}.f32",
        trial.subject_id, trial.device, trial.block_id, trial.trial_id
    );
    write_payload(&dir.join(&rel), &trial.data)?;
    Ok(TrialEntry {
        path: rel,
        device: trial.device,
        block: trial.block_id,
        trial: trial.trial_id,
        label: trial.label,
        sample_rate_hz: trial.sample_rate_hz,
        channel_count: trial.data.nrows(),
        sample_count: trial.data.ncols(),
    })
}

/// Assemble a manifest from per-trial entries, grouped by subject in key
/// order.
pub fn manifest_from_entries(
    dataset_name: &str,
    config_hash: Option<String>,
    mut entries: Vec<(u32, TrialEntry)>,
) -> DatasetManifest {
    entries.sort_by(|(sa, a), (sb, b)| {
        (sa, a.device, a.block, a.trial).cmp(&(sb, b.device, b.block, b.trial))
    });
    let mut subjects: Vec<SubjectEntry> = Vec::new();
    for (subject_id, entry) in entries {
        match subjects.last_mut() {
            Some(s) if s.id == subject_id => s.trials.push(entry),
            _ => subjects.push(SubjectEntry {
                id: subject_id,
                trials: vec![entry],
            }),
        }
    }
    DatasetManifest {
        dataset_name: dataset_name.to_string(),
        channel_names: None,
        config_hash,
        subjects,
    }
}

/// Load every trial referenced by a manifest, sorted by
/// (subject, device, block, trial).
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<RawTrial>> {
    let manifest = DatasetManifest::from_file(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let mut keys = BTreeSet::new();
    let mut work: Vec<(u32, TrialEntry, PathBuf)> = Vec::new();
    for subject in &manifest.subjects {
        for entry in &subject.trials {
            let key = (subject.id, entry.device, entry.block, entry.trial);
            if !keys.insert(key) {
                return Err(Error::DuplicateTrialKey(format!(
                    "(subject {}, {}, block {}, trial {})",
                    subject.id, entry.device, entry.block, entry.trial
                )));
            }
            work.push((subject.id, entry.clone(), base.join(&entry.path)));
        }
    }

    let base = base.to_path_buf();
    let mut trials = crate::par::try_map(&work, |(subject_id, entry, _)| {
        load_trial(&base, *subject_id, entry)
    })?;
    trials.sort_by_key(|t| t.key());
    Ok(trials)
}

/// Write trials into `dir` in the canonical layout and return the manifest
/// (also written to `dir/manifest.json`).
pub fn save_dataset(
    trials: &[RawTrial],
    dir: &Path,
    dataset_name: &str,
    config_hash: Option<String>,
) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut entries = Vec::with_capacity(trials.len());
    for trial in trials {
        entries.push((trial.subject_id, save_trial(trial, dir)?));
    }
    let manifest = manifest_from_entries(dataset_name, config_hash, entries);
    manifest.write(&dir.join("manifest.json"))?;
    Ok(manifest)
}
