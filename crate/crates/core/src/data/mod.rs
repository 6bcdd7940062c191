//! Dataset schema: trials, labels, segmentation, and label-space mapping.

mod manifest;
mod synthetic;

pub use manifest::{
    load_dataset, load_trial, manifest_from_entries, save_dataset, save_trial, DatasetManifest,
    SubjectEntry, TrialEntry,
};
pub use synthetic::{
    generate_synthetic, generate_synthetic_with_truth, generate_trial_pair, seed_stream,
    trial_keys, trial_label, SyntheticConfig, SyntheticTruth, DRY_RATE_HZ, WET_RATE_HZ,
};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five discrete emotion categories of the standard protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Anger,
    Fear,
    Sadness,
    Happiness,
    Neutrality,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 5] = [
        EmotionLabel::Anger,
        EmotionLabel::Fear,
        EmotionLabel::Sadness,
        EmotionLabel::Happiness,
        EmotionLabel::Neutrality,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&l| l == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<EmotionLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Anger => "anger",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Sadness => "sadness",
            EmotionLabel::Happiness => "happiness",
            EmotionLabel::Neutrality => "neutrality",
        }
    }

    /// Parse a label name; short aliases cover the reduced cross-dataset set.
    pub fn from_name(name: &str) -> Result<EmotionLabel> {
        match name.to_ascii_lowercase().as_str() {
            "anger" | "angry" => Ok(EmotionLabel::Anger),
            "fear" | "fearful" => Ok(EmotionLabel::Fear),
            "sadness" | "sad" => Ok(EmotionLabel::Sadness),
            "happiness" | "happy" => Ok(EmotionLabel::Happiness),
            "neutrality" | "neutral" => Ok(EmotionLabel::Neutrality),
            other => Err(Error::InvalidArgument(format!("unknown label name: {other}"))),
        }
    }
}

/// Recording device family; every trial carries exactly one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    Wet,
    Dry,
}

impl DeviceKind {
    pub fn name(self) -> &'static str {
        match self {
            DeviceKind::Wet => "wet",
            DeviceKind::Dry => "dry",
        }
    }
}

impl std::fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// An ordered set of labels defining the integer class codes for a run.
///
/// The standard space holds all five emotions; the cross-dataset space is a
/// four-label subset re-coded 0..3.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    classes: Vec<EmotionLabel>,
}

impl LabelSpace {
    pub fn full() -> LabelSpace {
        LabelSpace {
            classes: EmotionLabel::ALL.to_vec(),
        }
    }

    pub fn new(classes: Vec<EmotionLabel>) -> Result<LabelSpace> {
        if classes.is_empty() {
            return Err(Error::InvalidArgument("empty label space".into()));
        }
        let mut seen = classes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != classes.len() {
            return Err(Error::InvalidArgument("duplicate labels in label space".into()));
        }
        Ok(LabelSpace { classes })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn code(&self, label: EmotionLabel) -> Option<usize> {
        self.classes.iter().position(|&l| l == label)
    }

    pub fn classes(&self) -> &[EmotionLabel] {
        &self.classes
    }
}

/// One multichannel recording of one stimulus trial.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrial {
    pub subject_id: u32,
    pub block_id: u32,
    pub trial_id: u32,
    pub device: DeviceKind,
    pub label: EmotionLabel,
    pub sample_rate_hz: f64,
    /// channels x samples
    pub data: Array2<f64>,
}

impl RawTrial {
    pub fn new(
        subject_id: u32,
        block_id: u32,
        trial_id: u32,
        device: DeviceKind,
        label: EmotionLabel,
        sample_rate_hz: f64,
        data: Array2<f64>,
    ) -> Result<RawTrial> {
        if !(sample_rate_hz > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if data.nrows() == 0 {
            return Err(Error::InvalidArgument("trial must have at least one channel".into()));
        }
        if (data.ncols() as f64) < sample_rate_hz {
            return Err(Error::InvalidArgument(format!(
                "trial must be at least one second long ({} samples @ {sample_rate_hz} Hz)",
                data.ncols()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "trial data (subject {subject_id}, {device}, block {block_id}, trial {trial_id})"
            )));
        }
        Ok(RawTrial {
            subject_id,
            block_id,
            trial_id,
            device,
            label,
            sample_rate_hz,
            data,
        })
    }

    pub fn key(&self) -> (u32, DeviceKind, u32, u32) {
        (self.subject_id, self.device, self.block_id, self.trial_id)
    }

    pub fn duration_seconds(&self) -> f64 {
        self.data.ncols() as f64 / self.sample_rate_hz
    }
}

/// A fixed-length window cut from a trial, inheriting its identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub subject_id: u32,
    pub block_id: u32,
    pub trial_id: u32,
    pub device: DeviceKind,
    pub label: EmotionLabel,
    pub segment_index: usize,
    /// channels x window
    pub data: Array2<f64>,
}

/// Cut a trial into non-overlapping windows; the trailing remainder shorter
/// than one window is dropped.
pub fn segment_trial(trial: &RawTrial, segment_seconds: f64) -> Result<Vec<Segment>> {
    if !(segment_seconds > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "segment length must be positive, got {segment_seconds}"
        )));
    }
    let window = (segment_seconds * trial.sample_rate_hz).round() as usize;
    if window == 0 {
        return Err(Error::InvalidArgument("segment window rounds to zero samples".into()));
    }
    let n_segments = trial.data.ncols() / window;
    if n_segments == 0 {
        return Err(Error::SignalTooShort(format!(
            "trial of {} samples is shorter than one {window}-sample segment",
            trial.data.ncols()
        )));
    }
    Ok((0..n_segments)
        .map(|i| Segment {
            subject_id: trial.subject_id,
            block_id: trial.block_id,
            trial_id: trial.trial_id,
            device: trial.device,
            label: trial.label,
            segment_index: i,
            data: trial
                .data
                .slice(ndarray::s![.., i * window..(i + 1) * window])
                .to_owned(),
        })
        .collect())
}

/// Restrict trials to a shared label subset and re-code classes 0..n-1.
///
/// Returns the surviving trials, the reduced label space, and the per-class
/// trial counts in code order.
pub fn map_labels_interdataset(
    trials: Vec<RawTrial>,
    shared: &[EmotionLabel],
) -> Result<(Vec<RawTrial>, LabelSpace, Vec<usize>)> {
    let space = LabelSpace::new(shared.to_vec())?;
    let mut counts = vec![0usize; space.len()];
    let kept: Vec<RawTrial> = trials
        .into_iter()
        .filter(|t| {
            if let Some(code) = space.code(t.label) {
                counts[code] += 1;
                true
            } else {
                false
            }
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::Empty("no trials left after label mapping".into()));
    }
    Ok((kept, space, counts))
}
