//! Band decomposition, differential entropy, and temporal smoothing.
//!
//! Each preprocessed channel is band-pass filtered into the five canonical
//! bands, cut into segments, and reduced to differential entropy
//! 0.5*ln(2*pi*e*var) per (segment, channel, band). Feature sequences are
//! optionally smoothed per trial with a fixed-parameter scalar Kalman filter
//! plus RTS backward pass.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::data::{DeviceKind, LabelSpace, RawTrial};
use crate::dsp::{design_bandpass, filtfilt};
use crate::error::{Error, Result};

/// Variance floor applied before the logarithm; guards silent channels.
pub const VARIANCE_FLOOR: f64 = 1e-10;

/// Butterworth prototype order used for band decomposition.
const BAND_FILTER_ORDER: usize = 4;

/// The five canonical frequency bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Delta,
    Theta,
    Alpha,
    Beta,
    Gamma,
}

impl Band {
    pub const ALL: [Band; 5] = [Band::Delta, Band::Theta, Band::Alpha, Band::Beta, Band::Gamma];

    pub fn edges_hz(self) -> (f64, f64) {
        match self {
            Band::Delta => (1.0, 4.0),
            Band::Theta => (4.0, 8.0),
            Band::Alpha => (8.0, 14.0),
            Band::Beta => (14.0, 31.0),
            Band::Gamma => (31.0, 50.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Band::Delta => "delta",
            Band::Theta => "theta",
            Band::Alpha => "alpha",
            Band::Beta => "beta",
            Band::Gamma => "gamma",
        }
    }

    pub fn from_name(name: &str) -> Result<Band> {
        match name.to_ascii_lowercase().as_str() {
            "delta" => Ok(Band::Delta),
            "theta" => Ok(Band::Theta),
            "alpha" => Ok(Band::Alpha),
            "beta" => Ok(Band::Beta),
            "gamma" => Ok(Band::Gamma),
            other => Err(Error::InvalidArgument(format!("unknown band name: {other}"))),
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&b| b == self).unwrap()
    }
}

/// A named band with its canonical edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub band: Band,
    pub low_hz: f64,
    pub high_hz: f64,
}

impl BandSpec {
    pub fn canonical(band: Band) -> BandSpec {
        let (low_hz, high_hz) = band.edges_hz();
        BandSpec { band, low_hz, high_hz }
    }

    pub fn canonical_all() -> Vec<BandSpec> {
        Band::ALL.iter().map(|&b| BandSpec::canonical(b)).collect()
    }
}

/// Differential entropy (nats) of a series under the Gaussian model:
/// 0.5 * ln(2*pi*e*var), with the mean removed and population variance.
pub fn differential_entropy(series: &[f64]) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "differential entropy needs at least 2 samples, got {}",
            series.len()
        )));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let var = var.max(VARIANCE_FLOOR);
    Ok(0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * var).ln())
}

/// Fixed parameters of the scalar linear-dynamical-system smoother.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdsParams {
    pub transition: f64,
    pub observation: f64,
    pub process_var: f64,
    pub obs_var: f64,
    /// `None` starts the filter at the first observation.
    pub init_mean: Option<f64>,
    pub init_var: f64,
}

impl Default for LdsParams {
    fn default() -> Self {
        LdsParams {
            transition: 1.0,
            observation: 1.0,
            process_var: 0.01,
            obs_var: 0.1,
            init_mean: None,
            init_var: 1.0,
        }
    }
}

/// Kalman filter + RTS backward smoother over one feature series.
pub fn lds_smooth(series: &[f64], params: &LdsParams) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::Empty("cannot smooth an empty series".into()));
    }
    if !(params.process_var > 0.0) || !(params.obs_var > 0.0) || !(params.init_var > 0.0) {
        return Err(Error::InvalidArgument(
            "LDS variances must be positive".into(),
        ));
    }
    let a = params.transition;
    let c = params.observation;
    let q = params.process_var;
    let r = params.obs_var;
    let n = series.len();

    let mut mean_pred = vec![0.0; n];
    let mut var_pred = vec![0.0; n];
    let mut mean_filt = vec![0.0; n];
    let mut var_filt = vec![0.0; n];

    for t in 0..n {
        if t == 0 {
            mean_pred[0] = params.init_mean.unwrap_or(series[0] / c);
            var_pred[0] = params.init_var;
        } else {
            mean_pred[t] = a * mean_filt[t - 1];
            var_pred[t] = a * a * var_filt[t - 1] + q;
        }
        let innovation_var = c * c * var_pred[t] + r;
        let gain = var_pred[t] * c / innovation_var;
        mean_filt[t] = mean_pred[t] + gain * (series[t] - c * mean_pred[t]);
        var_filt[t] = (1.0 - gain * c) * var_pred[t];
    }

    let mut smoothed = mean_filt.clone();
    for t in (0..n - 1).rev() {
        let j = var_filt[t] * a / var_pred[t + 1];
        smoothed[t] = mean_filt[t] + j * (smoothed[t + 1] - mean_pred[t + 1]);
    }
    Ok(smoothed)
}

/// Per-trial DE features: segments x channels x bands.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub values: Array3<f64>,
    pub subject_id: u32,
    pub block_id: u32,
    pub trial_id: u32,
    pub device: DeviceKind,
    /// Class code per segment, under the label space used at extraction.
    pub labels: Vec<usize>,
    pub bands: Vec<Band>,
    pub smoothed: bool,
}

impl FeatureTensor {
    pub fn n_segments(&self) -> usize {
        self.values.dim().0
    }

    pub fn n_channels(&self) -> usize {
        self.values.dim().1
    }

    pub fn n_bands(&self) -> usize {
        self.values.dim().2
    }
}

/// Extract per-segment DE features for every (channel, band).
///
/// The channel is band-pass filtered over the whole trial first, then cut
/// into segments, so segment boundaries see no filter edge transients.
pub fn extract_features(
    trial: &RawTrial,
    bands: &[Band],
    segment_seconds: f64,
    space: &LabelSpace,
) -> Result<FeatureTensor> {
    if bands.is_empty() {
        return Err(Error::InvalidArgument("band list is empty".into()));
    }
    let label_code = space.code(trial.label).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "trial label {} is outside the label space",
            trial.label.name()
        ))
    })?;
    let fs = trial.sample_rate_hz;
    let window = (segment_seconds * fs).round() as usize;
    let n_segments = trial.data.ncols() / window.max(1);
    if window == 0 || n_segments == 0 {
        return Err(Error::SignalTooShort(format!(
            "trial of {} samples is shorter than one {window}-sample segment",
            trial.data.ncols()
        )));
    }
    let n_channels = trial.data.nrows();

    let filters = bands
        .iter()
        .map(|b| {
            let spec = BandSpec::canonical(*b);
            design_bandpass(spec.low_hz, spec.high_hz, fs, BAND_FILTER_ORDER)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut values = Array3::<f64>::zeros((n_segments, n_channels, bands.len()));
    for ch in 0..n_channels {
        let x: Vec<f64> = trial.data.row(ch).to_vec();
        for (bi, filter) in filters.iter().enumerate() {
            let banded = filtfilt(filter, &x)?;
            for seg in 0..n_segments {
                let slice = &banded[seg * window..(seg + 1) * window];
                values[[seg, ch, bi]] = differential_entropy(slice)?;
            }
        }
    }

    Ok(FeatureTensor {
        values,
        subject_id: trial.subject_id,
        block_id: trial.block_id,
        trial_id: trial.trial_id,
        device: trial.device,
        labels: vec![label_code; n_segments],
        bands: bands.to_vec(),
        smoothed: false,
    })
}

/// Smooth each (channel, band) series across the trial's segment sequence.
/// Never crosses trial boundaries: one tensor is one trial.
pub fn smooth_features(tensor: &mut FeatureTensor, params: &LdsParams) -> Result<()> {
    let (n_segments, n_channels, n_bands) = tensor.values.dim();
    for ch in 0..n_channels {
        for b in 0..n_bands {
            let series: Vec<f64> = (0..n_segments).map(|s| tensor.values[[s, ch, b]]).collect();
            let smoothed = lds_smooth(&series, params)?;
            for (s, v) in smoothed.into_iter().enumerate() {
                tensor.values[[s, ch, b]] = v;
            }
        }
    }
    tensor.smoothed = true;
    Ok(())
}

/// Feature-extraction parameters for the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub segment_seconds: f64,
    pub smooth: bool,
    pub lds: LdsParams,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            segment_seconds: 5.0,
            smooth: true,
            lds: LdsParams::default(),
        }
    }
}

/// Extract (and optionally smooth) features for a batch of trials.
pub fn extract_all(
    trials: &[RawTrial],
    cfg: &FeatureConfig,
    space: &LabelSpace,
) -> Result<Vec<FeatureTensor>> {
    crate::par::try_map(trials, |t| {
        let mut tensor = extract_features(t, &Band::ALL, cfg.segment_seconds, space)?;
        if cfg.smooth {
            smooth_features(&mut tensor, &cfg.lds)?;
        }
        Ok(tensor)
    })
}

/// Always-sequential variant of [`extract_all`], for benchmarking.
pub fn extract_all_seq(
    trials: &[RawTrial],
    cfg: &FeatureConfig,
    space: &LabelSpace,
) -> Result<Vec<FeatureTensor>> {
    crate::par::try_map_seq(trials, |t| {
        let mut tensor = extract_features(t, &Band::ALL, cfg.segment_seconds, space)?;
        if cfg.smooth {
            smooth_features(&mut tensor, &cfg.lds)?;
        }
        Ok(tensor)
    })
}

/// Flatten to segments x (channels * masked bands), channel-major band-minor.
pub fn flatten_features(tensor: &FeatureTensor, mask: &[Band]) -> Result<Array2<f64>> {
    if mask.is_empty() {
        return Err(Error::InvalidArgument("band mask is empty".into()));
    }
    let positions = mask
        .iter()
        .map(|m| {
            tensor.bands.iter().position(|b| b == m).ok_or_else(|| {
                Error::InvalidArgument(format!("band {} not present in tensor", m.name()))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (n_segments, n_channels, _) = tensor.values.dim();
    let mut out = Array2::<f64>::zeros((n_segments, n_channels * mask.len()));
    for seg in 0..n_segments {
        for ch in 0..n_channels {
            for (mi, &bi) in positions.iter().enumerate() {
                out[[seg, ch * mask.len() + mi]] = tensor.values[[seg, ch, bi]];
            }
        }
    }
    Ok(out)
}

/// Inverse of [`flatten_features`] for a full-band mask, for round-trip checks.
pub fn unflatten_features(flat: &Array2<f64>, n_channels: usize, n_bands: usize) -> Result<Array3<f64>> {
    if flat.ncols() != n_channels * n_bands {
        return Err(Error::DimensionMismatch(format!(
            "cannot unflatten {} columns into {n_channels} channels x {n_bands} bands",
            flat.ncols()
        )));
    }
    let n_segments = flat.nrows();
    let mut out = Array3::<f64>::zeros((n_segments, n_channels, n_bands));
    for seg in 0..n_segments {
        for ch in 0..n_channels {
            for b in 0..n_bands {
                out[[seg, ch, b]] = flat[[seg, ch * n_bands + b]];
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureHeader {
    subject_id: u32,
    block_id: u32,
    trial_id: u32,
    device: DeviceKind,
    n_segments: usize,
    n_channels: usize,
    bands: Vec<Band>,
    labels: Vec<usize>,
    smoothed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

/// Write a tensor as a one-line JSON header followed by a little-endian
/// float32 payload in flattening order.
pub fn write_feature_file(
    tensor: &FeatureTensor,
    path: &Path,
    config_hash: Option<String>,
) -> Result<()> {
    let header = FeatureHeader {
        subject_id: tensor.subject_id,
        block_id: tensor.block_id,
        trial_id: tensor.trial_id,
        device: tensor.device,
        n_segments: tensor.n_segments(),
        n_channels: tensor.n_channels(),
        bands: tensor.bands.clone(),
        labels: tensor.labels.clone(),
        smoothed: tensor.smoothed,
        config_hash,
    };
    let mut bytes = serde_json::to_string(&header).expect("header serializes").into_bytes();
    bytes.push(b'\n');
    for seg in 0..tensor.n_segments() {
        for ch in 0..tensor.n_channels() {
            for b in 0..tensor.n_bands() {
                bytes.extend_from_slice(&(tensor.values[[seg, ch, b]] as f32).to_le_bytes());
            }
        }
    }
    fs::write(path, &bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a tensor written by [`write_feature_file`]; also returns the header's
/// config hash.
pub fn read_feature_file(path: &Path) -> Result<(FeatureTensor, Option<String>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let newline = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Malformed {
        path: path.display().to_string(),
        detail: "missing header line".into(),
    })?;
    let header: FeatureHeader =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| Error::Malformed {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
    let payload = &bytes[newline + 1..];
    let expected = header.n_segments * header.n_channels * header.bands.len() * 4;
    if payload.len() != expected {
        return Err(Error::SizeMismatch {
            path: path.display().to_string(),
            expected: (newline + 1 + expected) as u64,
            found: bytes.len() as u64,
        });
    }
    let mut values = Array3::<f64>::zeros((header.n_segments, header.n_channels, header.bands.len()));
    let mut off = 0;
    for seg in 0..header.n_segments {
        for ch in 0..header.n_channels {
            for b in 0..header.bands.len() {
                let v = f32::from_le_bytes([
                    payload[off],
                    payload[off + 1],
                    payload[off + 2],
                    payload[off + 3],
                ]);
                values[[seg, ch, b]] = f64::from(v);
                off += 4;
            }
        }
    }
    if header.labels.len() != header.n_segments {
        return Err(Error::Malformed {
            path: path.display().to_string(),
            detail: "label count does not match segment count".into(),
        });
    }
    Ok((
        FeatureTensor {
            values,
            subject_id: header.subject_id,
            block_id: header.block_id,
            trial_id: header.trial_id,
            device: header.device,
            labels: header.labels,
            bands: header.bands,
            smoothed: header.smoothed,
        },
        header.config_hash,
    ))
}
