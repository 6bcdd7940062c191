//! Synthetic paired wet/dry dataset generator.
//!
//! Every trial draws a class-dependent band-power profile, synthesizes
//! band-limited latent sources as sums of random-phase sinusoids (evaluable
//! at any sampling rate, so both devices see the same underlying signals),
//! mixes them through per-subject matrices, and adds device-specific white
//! noise. Seeding is split per (subject, block, trial, purpose) so that
//! generation is order-independent and bit-reproducible.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DeviceKind, EmotionLabel, RawTrial};
use crate::error::{Error, Result};
use crate::features::Band;

/// Nominal wet-cap acquisition rate.
pub const WET_RATE_HZ: f64 = 1000.0;
/// Nominal dry-headset acquisition rate.
pub const DRY_RATE_HZ: f64 = 300.0;

/// Sinusoids per (source, band).
const SINUSOIDS_PER_BAND: usize = 6;
/// Log-amplitude jitter applied per (trial, band); shared by both devices.
const TRIAL_JITTER_SIGMA: f64 = 0.2;
/// Log-amplitude spread of per-subject source spectra.
const SOURCE_SHAPE_SIGMA: f64 = 0.3;

/// Per-class amplitude gain for (delta, theta, alpha, beta, gamma).
/// Delta gains are strictly decreasing in class order so per-class
/// band-power ordering is checkable.
const CLASS_BAND_GAIN: [[f64; 5]; 5] = [
    [1.60, 0.80, 1.00, 1.30, 0.90], // anger
    [1.30, 1.20, 0.70, 1.00, 1.20], // fear
    [1.00, 1.40, 1.20, 0.80, 0.70], // sadness
    [0.80, 1.00, 1.50, 1.10, 1.10], // happiness
    [0.60, 0.90, 0.90, 0.90, 1.00], // neutrality
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_subjects: u32,
    pub n_blocks: u32,
    pub trials_per_block: u32,
    pub trial_seconds: f64,
    pub latent_dim: usize,
    pub wet_channels: usize,
    pub dry_channels: usize,
    pub wet_noise_sigma: f64,
    pub dry_noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_subjects: 8,
            n_blocks: 5,
            trials_per_block: 5,
            trial_seconds: 20.0,
            latent_dim: 4,
            wet_channels: 8,
            dry_channels: 4,
            wet_noise_sigma: 0.3,
            dry_noise_sigma: 6.0,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.n_blocks == 0 || self.trials_per_block == 0 {
            return Err(Error::InvalidArgument(
                "subject/block/trial counts must be positive".into(),
            ));
        }
        if !(self.trial_seconds >= 1.0) {
            return Err(Error::InvalidArgument(
                "trial_seconds must be at least 1".into(),
            ));
        }
        if self.latent_dim == 0 {
            return Err(Error::InvalidArgument("latent_dim must be positive".into()));
        }
        if self.dry_channels >= self.wet_channels {
            return Err(Error::InvalidArgument(format!(
                "dry_channels ({}) must be fewer than wet_channels ({})",
                self.dry_channels, self.wet_channels
            )));
        }
        if self.dry_channels == 0 {
            return Err(Error::InvalidArgument("dry_channels must be positive".into()));
        }
        if !(self.wet_noise_sigma >= 0.0) || !(self.dry_noise_sigma > self.wet_noise_sigma) {
            return Err(Error::InvalidArgument(format!(
                "noise levels must satisfy dry ({}) > wet ({}) >= 0",
                self.dry_noise_sigma, self.wet_noise_sigma
            )));
        }
        Ok(())
    }
}

/// Ground truth for one generated trial pair, used by verification oracles.
#[derive(Debug, Clone)]
pub struct SyntheticTruth {
    pub subject_id: u32,
    pub block_id: u32,
    pub trial_id: u32,
    pub label: EmotionLabel,
    /// latent x samples at the wet rate
    pub sources_wet: Array2<f64>,
    /// latent x samples at the dry rate
    pub sources_dry: Array2<f64>,
    /// Noise-free mixes.
    pub wet_clean: Array2<f64>,
    pub dry_clean: Array2<f64>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a master seed with a stream identity into an independent RNG seed;
/// used everywhere parallel work must draw order-independent randomness.
pub fn seed_stream(master: u64, parts: &[u64]) -> u64 {
    let mut state = splitmix64(master ^ 0xD6E8_FEB8_6659_FD93);
    for &p in parts {
        state = splitmix64(state ^ p.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    }
    state
}

use seed_stream as derive_seed;

const STREAM_MIX: u64 = 1;
const STREAM_SOURCES: u64 = 2;
const STREAM_NOISE_WET: u64 = 3;
const STREAM_NOISE_DRY: u64 = 4;

/// Label for a (block, trial) slot; every block covers all five emotions.
pub fn trial_label(block: u32, trial: u32) -> EmotionLabel {
    let idx = ((block - 1) + (trial - 1)) as usize % EmotionLabel::ALL.len();
    EmotionLabel::ALL[idx]
}

struct Sinusoid {
    omega_hz: f64,
    phase: f64,
    amplitude: f64,
}

/// Per-subject mixing matrices and source spectral shapes.
struct SubjectMixing {
    wet: Array2<f64>,
    dry: Array2<f64>,
    /// latent x band multiplier giving each source its own spectral signature
    shape: Array2<f64>,
}

fn subject_mixing(cfg: &SyntheticConfig, subject: u32) -> SubjectMixing {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[STREAM_MIX, subject as u64]));
    let normal = Normal::new(0.0, 1.0).unwrap();
    let scale = 1.0 / (cfg.latent_dim as f64).sqrt();
    let wet = Array2::from_shape_fn((cfg.wet_channels, cfg.latent_dim), |_| {
        normal.sample(&mut rng) * scale
    });
    let dry = Array2::from_shape_fn((cfg.dry_channels, cfg.latent_dim), |_| {
        normal.sample(&mut rng) * scale
    });
    let shape = Array2::from_shape_fn((cfg.latent_dim, 5), |_| {
        (normal.sample(&mut rng) * SOURCE_SHAPE_SIGMA).exp()
    });
    SubjectMixing { wet, dry, shape }
}

/// Draw the sinusoid bank for one trial. The same bank is evaluated at both
/// device rates, so wet and dry signals share identical sources.
fn trial_sinusoids(
    cfg: &SyntheticConfig,
    mixing: &SubjectMixing,
    subject: u32,
    block: u32,
    trial: u32,
) -> Vec<Vec<Sinusoid>> {
    let label = trial_label(block, trial);
    let gains = &CLASS_BAND_GAIN[label.index()];
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        cfg.seed,
        &[STREAM_SOURCES, subject as u64, block as u64, trial as u64],
    ));
    let normal = Normal::new(0.0, 1.0).unwrap();

    // Band jitter is drawn once per trial and shared by every source.
    let jitter: Vec<f64> = (0..5)
        .map(|_| (normal.sample(&mut rng) * TRIAL_JITTER_SIGMA).exp())
        .collect();

    (0..cfg.latent_dim)
        .map(|source| {
            let mut bank = Vec::with_capacity(5 * SINUSOIDS_PER_BAND);
            for (b, band) in Band::ALL.iter().enumerate() {
                let (low, high) = band.edges_hz();
                let g = gains[b] * jitter[b] * mixing.shape[[source, b]];
                // K equal sinusoids with total variance g^2.
                let amplitude = g * (2.0 / SINUSOIDS_PER_BAND as f64).sqrt();
                for _ in 0..SINUSOIDS_PER_BAND {
                    bank.push(Sinusoid {
                        omega_hz: rng.random_range(low..high),
                        phase: rng.random_range(0.0..std::f64::consts::TAU),
                        amplitude,
                    });
                }
            }
            bank
        })
        .collect()
}

/// Evaluate the sinusoid bank at `rate_hz` via rotation recurrences.
fn render_sources(banks: &[Vec<Sinusoid>], rate_hz: f64, n_samples: usize) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((banks.len(), n_samples));
    for (s, bank) in banks.iter().enumerate() {
        let mut row = out.row_mut(s);
        for sin in bank {
            let omega = std::f64::consts::TAU * sin.omega_hz / rate_hz;
            let (step_sin, step_cos) = omega.sin_cos();
            let (mut ph_sin, mut ph_cos) = sin.phase.sin_cos();
            for v in row.iter_mut() {
                *v += sin.amplitude * ph_sin;
                let next_sin = ph_sin * step_cos + ph_cos * step_sin;
                ph_cos = ph_cos * step_cos - ph_sin * step_sin;
                ph_sin = next_sin;
            }
        }
    }
    out
}

fn render_device(
    mixing: &Array2<f64>,
    sources: &Array2<f64>,
    noise_sigma: f64,
    noise_seed: u64,
) -> (Array2<f64>, Array2<f64>) {
    let clean = mixing.dot(sources);
    let mut data = clean.clone();
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let normal = Normal::new(0.0, noise_sigma).unwrap();
        for v in data.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    (data, clean)
}

/// Generate one paired (wet, dry) trial with its ground truth.
pub fn generate_trial_pair_with_truth(
    cfg: &SyntheticConfig,
    subject: u32,
    block: u32,
    trial: u32,
) -> Result<(RawTrial, RawTrial, SyntheticTruth)> {
    cfg.validate()?;
    let mixing = subject_mixing(cfg, subject);
    let banks = trial_sinusoids(cfg, &mixing, subject, block, trial);
    let label = trial_label(block, trial);

    let n_wet = (cfg.trial_seconds * WET_RATE_HZ).round() as usize;
    let n_dry = (cfg.trial_seconds * DRY_RATE_HZ).round() as usize;
    let sources_wet = render_sources(&banks, WET_RATE_HZ, n_wet);
    let sources_dry = render_sources(&banks, DRY_RATE_HZ, n_dry);

    let (wet_data, wet_clean) = render_device(
        &mixing.wet,
        &sources_wet,
        cfg.wet_noise_sigma,
        derive_seed(
            cfg.seed,
            &[STREAM_NOISE_WET, subject as u64, block as u64, trial as u64],
        ),
    );
    let (dry_data, dry_clean) = render_device(
        &mixing.dry,
        &sources_dry,
        cfg.dry_noise_sigma,
        derive_seed(
            cfg.seed,
            &[STREAM_NOISE_DRY, subject as u64, block as u64, trial as u64],
        ),
    );

    let wet = RawTrial::new(subject, block, trial, DeviceKind::Wet, label, WET_RATE_HZ, wet_data)?;
    let dry = RawTrial::new(subject, block, trial, DeviceKind::Dry, label, DRY_RATE_HZ, dry_data)?;
    let truth = SyntheticTruth {
        subject_id: subject,
        block_id: block,
        trial_id: trial,
        label,
        sources_wet,
        sources_dry,
        wet_clean,
        dry_clean,
    };
    Ok((wet, dry, truth))
}

/// Generate one paired (wet, dry) trial.
pub fn generate_trial_pair(
    cfg: &SyntheticConfig,
    subject: u32,
    block: u32,
    trial: u32,
) -> Result<(RawTrial, RawTrial)> {
    generate_trial_pair_with_truth(cfg, subject, block, trial).map(|(w, d, _)| (w, d))
}

/// All (subject, block, trial) keys of a config, in canonical order.
pub fn trial_keys(cfg: &SyntheticConfig) -> Vec<(u32, u32, u32)> {
    let mut keys = Vec::new();
    for subject in 1..=cfg.n_subjects {
        for block in 1..=cfg.n_blocks {
            for trial in 1..=cfg.trials_per_block {
                keys.push((subject, block, trial));
            }
        }
    }
    keys
}

/// Generate the full paired dataset, sorted by (subject, device, block, trial).
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<(Vec<RawTrial>, Vec<RawTrial>)> {
    cfg.validate()?;
    let keys = trial_keys(cfg);
    let pairs = crate::par::try_map(&keys, |&(s, b, t)| generate_trial_pair(cfg, s, b, t))?;
    Ok(pairs.into_iter().unzip())
}

/// Like [`generate_synthetic`] but also returning per-trial ground truth.
pub fn generate_synthetic_with_truth(
    cfg: &SyntheticConfig,
) -> Result<(Vec<RawTrial>, Vec<RawTrial>, Vec<SyntheticTruth>)> {
    cfg.validate()?;
    let keys = trial_keys(cfg);
    let triples = crate::par::try_map(&keys, |&(s, b, t)| {
        generate_trial_pair_with_truth(cfg, s, b, t)
    })?;
    let mut wet = Vec::with_capacity(triples.len());
    let mut dry = Vec::with_capacity(triples.len());
    let mut truth = Vec::with_capacity(triples.len());
    for (w, d, t) in triples {
        wet.push(w);
        dry.push(d);
        truth.push(t);
    }
    Ok((wet, dry, truth))
}
