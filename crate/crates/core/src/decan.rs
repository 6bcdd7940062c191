//! The cross-device alignment model: wet/dry encoders with a shared trunk,
//! shared projector and classifier head, a cosine-similarity contrastive
//! loss over paired projections, and the joint training loop.
//!
//! The wet encoder is a private input layer followed by the shared trunk;
//! the dry encoder is a private adapter into the same trunk, so the two
//! paths literally traverse the same layer objects and parameter updates
//! are shared by construction.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::DeviceKind;
use crate::error::{Error, Result};
use crate::features::{flatten_features, Band, FeatureTensor};
use crate::network::{
    backward_path, forward_path, load_checkpoint, save_checkpoint, softmax,
    softmax_cross_entropy, Activation, DenseLayer, LayerGrad, RmspropState,
};

/// Denominator convention of the contrastive loss.
///
/// `StrictPaper` keeps only the `j != i` terms, exactly as the indicator is
/// printed; the positive term then sits outside its own denominator and the
/// loss is unbounded below. `InclusivePositive` keeps `j = i` in the sum,
/// which bounds every per-pair term at zero; it is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveMode {
    StrictPaper,
    InclusivePositive,
}

/// Learning-rate search grid: {1,3,5,7,9} x 10^-4, 10^-3, 10^-2.
pub const LEARNING_RATE_GRID: [f64; 15] = [
    1e-4, 3e-4, 5e-4, 7e-4, 9e-4, 1e-3, 3e-3, 5e-3, 7e-3, 9e-3, 1e-2, 3e-2, 5e-2, 7e-2, 9e-2,
];

/// Projector hidden-width search space.
pub const PROJECTOR_HIDDEN_CHOICES: [usize; 4] = [64, 128, 256, 512];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecanConfig {
    pub wet_input_dim: usize,
    pub dry_input_dim: usize,
    pub n_classes: usize,
    /// Encoder hidden widths; the last two are the shared trunk.
    pub hidden: [usize; 3],
    pub projector_hidden: usize,
    pub projector_out: usize,
    pub temperature: f64,
    pub contrastive_mode: ContrastiveMode,
    /// Add the dry-anchored direction on top of the wet-anchored loss.
    pub symmetric_loss: bool,
    /// Ablation switch: drop the contrastive term entirely.
    pub use_contrastive: bool,
    /// Pool pairs across subjects before mini-batching instead of keeping
    /// each batch within one subject.
    pub mix_subject_batches: bool,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl DecanConfig {
    pub fn new(wet_input_dim: usize, dry_input_dim: usize) -> DecanConfig {
        DecanConfig {
            wet_input_dim,
            dry_input_dim,
            n_classes: 5,
            hidden: [128, 64, 32],
            projector_hidden: 128,
            projector_out: 64,
            temperature: 0.5,
            contrastive_mode: ContrastiveMode::InclusivePositive,
            symmetric_loss: false,
            use_contrastive: true,
            mix_subject_batches: false,
            learning_rate: 1e-3,
            epochs: 300,
            batch_size: 256,
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.wet_input_dim == 0 || self.dry_input_dim == 0 {
            return Err(Error::InvalidArgument("input dimensions must be positive".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::InvalidArgument("need at least two classes".into()));
        }
        if self.hidden.iter().any(|&h| h == 0)
            || self.projector_hidden == 0
            || self.projector_out == 0
        {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument(
                "batch size must be at least 2 (the contrastive loss needs negatives)".into(),
            ));
        }
        Ok(())
    }
}

// Arena indices; trunk, projector and classifier are reached from both paths.
const WET_STACK: usize = 0;
const DRY_ADAPTER: usize = 1;
const TRUNK_1: usize = 2;
const TRUNK_2: usize = 3;
const PROJECTOR_1: usize = 4;
const PROJECTOR_2: usize = 5;
const CLASSIFIER: usize = 6;
const LAYER_NAMES: [&str; 7] = [
    "wet_stack",
    "dry_adapter",
    "trunk1",
    "trunk2",
    "projector1",
    "projector2",
    "classifier",
];

#[derive(Debug, Clone)]
pub struct DecanModel {
    pub config: DecanConfig,
    /// All parameter-owning layers; paths below index into this arena.
    pub layers: Vec<DenseLayer>,
}

impl DecanModel {
    pub fn new(config: DecanConfig) -> Result<DecanModel> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let [h0, h1, h2] = config.hidden;
        let layers = vec![
            DenseLayer::new(config.wet_input_dim, h0, Activation::Relu, &mut rng),
            DenseLayer::new(config.dry_input_dim, h0, Activation::Relu, &mut rng),
            DenseLayer::new(h0, h1, Activation::Relu, &mut rng).with_tag("trunk1"),
            DenseLayer::new(h1, h2, Activation::Relu, &mut rng).with_tag("trunk2"),
            DenseLayer::new(h2, config.projector_hidden, Activation::Relu, &mut rng)
                .with_tag("projector1"),
            DenseLayer::new(config.projector_hidden, config.projector_out, Activation::Identity, &mut rng)
                .with_tag("projector2"),
            DenseLayer::new(h2, config.n_classes, Activation::Identity, &mut rng)
                .with_tag("classifier"),
        ];
        Ok(DecanModel { config, layers })
    }

    fn encoder_path(&self, device: DeviceKind) -> [&DenseLayer; 3] {
        let input = match device {
            DeviceKind::Wet => WET_STACK,
            DeviceKind::Dry => DRY_ADAPTER,
        };
        [&self.layers[input], &self.layers[TRUNK_1], &self.layers[TRUNK_2]]
    }

    fn projector_path(&self) -> [&DenseLayer; 2] {
        [&self.layers[PROJECTOR_1], &self.layers[PROJECTOR_2]]
    }

    /// Encoder output (the 32-dimensional latent) for one device's features.
    pub fn encode(&self, features: &Array2<f64>, device: DeviceKind) -> Result<Array2<f64>> {
        Ok(forward_path(&self.encoder_path(device), features)?.output)
    }

    /// Shared nonlinear projection of encoder latents.
    pub fn project(&self, latent: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(forward_path(&self.projector_path(), latent)?.output)
    }

    /// Classifier logits for encoder latents.
    pub fn classify(&self, latent: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(forward_path(&[&self.layers[CLASSIFIER]], latent)?.output)
    }

    /// Inference on dry features alone: adapter, trunk, classifier. No wet
    /// parameter is touched.
    pub fn predict_dry(&self, dry_features: &Array2<f64>) -> Result<DryPrediction> {
        let latents = self.encode(dry_features, DeviceKind::Dry)?;
        let probabilities = softmax(&self.classify(&latents)?);
        let predictions = probabilities
            .rows()
            .into_iter()
            .map(|row| {
                // Ties break toward the lowest class index.
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect();
        Ok(DryPrediction {
            predictions,
            probabilities,
            latents,
        })
    }

    /// Joint loss of one paired batch, forward pass only (no caches, no
    /// gradient work); component sums match [`Self::loss_and_grads`].
    pub fn total_loss(&self, batch: &PairedBatch) -> Result<LossComponents> {
        batch.check()?;
        let cfg = &self.config;
        let run = |path: &[&DenseLayer], input: &Array2<f64>| -> Array2<f64> {
            let mut x = input.clone();
            for layer in path {
                x = x.dot(&layer.weight.t()) + &layer.bias;
                if layer.activation == Activation::Relu {
                    x.mapv_inplace(|v| v.max(0.0));
                }
            }
            x
        };
        let ce = |logits: &Array2<f64>, targets: &[usize]| -> f64 {
            let probs = crate::network::softmax(logits);
            let mut loss = 0.0;
            for (i, &t) in targets.iter().enumerate() {
                loss -= probs[[i, t]].ln();
            }
            loss / targets.len() as f64
        };
        let v_w = run(&self.encoder_path(DeviceKind::Wet), &batch.wet);
        let v_d = run(&self.encoder_path(DeviceKind::Dry), &batch.dry);
        let head = [&self.layers[CLASSIFIER]];
        let wet_ce = ce(&run(&head, &v_w), &batch.labels);
        let dry_ce = ce(&run(&head, &v_d), &batch.labels);
        let contrastive = if cfg.use_contrastive {
            let p_w = run(&self.projector_path(), &v_w);
            let p_d = run(&self.projector_path(), &v_d);
            let mut loss = contrastive_forward(&p_w, &p_d, cfg.temperature, cfg.contrastive_mode)?;
            if cfg.symmetric_loss {
                loss += contrastive_forward(&p_d, &p_w, cfg.temperature, cfg.contrastive_mode)?;
            }
            loss
        } else {
            0.0
        };
        Ok(LossComponents {
            total: wet_ce + dry_ce + contrastive,
            wet_ce,
            dry_ce,
            contrastive,
        })
    }

    /// Joint loss and parameter gradients aligned with the layer arena.
    pub fn loss_and_grads(&self, batch: &PairedBatch) -> Result<(LossComponents, Vec<LayerGrad>)> {
        batch.check()?;
        let cfg = &self.config;
        let wet_path = self.encoder_path(DeviceKind::Wet);
        let dry_path = self.encoder_path(DeviceKind::Dry);
        let proj_path = self.projector_path();
        let head_path = [&self.layers[CLASSIFIER]];

        let wet_cache = forward_path(&wet_path, &batch.wet)?;
        let dry_cache = forward_path(&dry_path, &batch.dry)?;

        let wet_head = forward_path(&head_path, &wet_cache.output)?;
        let dry_head = forward_path(&head_path, &dry_cache.output)?;
        let (wet_ce, d_wet_logits) = softmax_cross_entropy(&wet_head.output, &batch.labels)?;
        let (dry_ce, d_dry_logits) = softmax_cross_entropy(&dry_head.output, &batch.labels)?;

        let mut grads: Vec<LayerGrad> = self.layers.iter().map(LayerGrad::zeros_like).collect();

        let (head_grads_w, mut d_latent_wet) = backward_path(&head_path, &wet_head, &d_wet_logits)?;
        let (head_grads_d, mut d_latent_dry) = backward_path(&head_path, &dry_head, &d_dry_logits)?;
        grads[CLASSIFIER].accumulate(&head_grads_w[0]);
        grads[CLASSIFIER].accumulate(&head_grads_d[0]);

        let mut contrastive = 0.0;
        if cfg.use_contrastive {
            let proj_wet = forward_path(&proj_path, &wet_cache.output)?;
            let proj_dry = forward_path(&proj_path, &dry_cache.output)?;
            let (loss_cl, d_proj_wet, d_proj_dry) = contrastive_loss_grad(
                &proj_wet.output,
                &proj_dry.output,
                cfg.temperature,
                cfg.contrastive_mode,
                cfg.symmetric_loss,
            )?;
            contrastive = loss_cl;
            let (proj_grads_w, d_lat_w) = backward_path(&proj_path, &proj_wet, &d_proj_wet)?;
            let (proj_grads_d, d_lat_d) = backward_path(&proj_path, &proj_dry, &d_proj_dry)?;
            for (i, &arena) in [PROJECTOR_1, PROJECTOR_2].iter().enumerate() {
                grads[arena].accumulate(&proj_grads_w[i]);
                grads[arena].accumulate(&proj_grads_d[i]);
            }
            d_latent_wet += &d_lat_w;
            d_latent_dry += &d_lat_d;
        }

        let (enc_grads_w, _) = backward_path(&wet_path, &wet_cache, &d_latent_wet)?;
        let (enc_grads_d, _) = backward_path(&dry_path, &dry_cache, &d_latent_dry)?;
        for (i, &arena) in [WET_STACK, TRUNK_1, TRUNK_2].iter().enumerate() {
            grads[arena].accumulate(&enc_grads_w[i]);
        }
        for (i, &arena) in [DRY_ADAPTER, TRUNK_1, TRUNK_2].iter().enumerate() {
            grads[arena].accumulate(&enc_grads_d[i]);
        }

        Ok((
            LossComponents {
                total: wet_ce + dry_ce + contrastive,
                wet_ce,
                dry_ce,
                contrastive,
            },
            grads,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let named: Vec<(&str, &DenseLayer)> = LAYER_NAMES
            .iter()
            .zip(&self.layers)
            .map(|(n, l)| (*n, l))
            .collect();
        let extra = serde_json::to_value(&self.config).expect("config serializes");
        save_checkpoint(path, &named, self.config.seed, Some(extra))
    }

    pub fn load(path: &Path) -> Result<DecanModel> {
        let (layers, _, extra) = load_checkpoint(path)?;
        let config: DecanConfig = serde_json::from_value(extra.ok_or_else(|| Error::Malformed {
            path: path.display().to_string(),
            detail: "checkpoint has no model config".into(),
        })?)
        .map_err(|e| Error::Malformed {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        if layers.len() != LAYER_NAMES.len()
            || layers.iter().zip(LAYER_NAMES).any(|((n, _), want)| n != want)
        {
            return Err(Error::Malformed {
                path: path.display().to_string(),
                detail: "unexpected layer set in checkpoint".into(),
            });
        }
        Ok(DecanModel {
            config,
            layers: layers.into_iter().map(|(_, l)| l).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub total: f64,
    pub wet_ce: f64,
    pub dry_ce: f64,
    pub contrastive: f64,
}

#[derive(Debug, Clone)]
pub struct DryPrediction {
    pub predictions: Vec<usize>,
    pub probabilities: Array2<f64>,
    /// Encoder latents, exported for external embedding plots.
    pub latents: Array2<f64>,
}

/// Cosine similarity; zero-norm inputs are defined as similarity 0.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        log::warn!("cosine similarity of a zero-norm vector; returning 0");
        return 0.0;
    }
    dot / (na * nb)
}

fn normalize_rows(m: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
    let mut unit = m.clone();
    let mut norms = Vec::with_capacity(m.nrows());
    for mut row in unit.rows_mut() {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.mapv_inplace(|v| v / n);
        } else {
            log::warn!("zero-norm projection row; treated as similarity 0 against everything");
        }
        norms.push(n);
    }
    (unit, norms)
}

/// Loss of one anchoring direction, no gradients.
fn contrastive_forward(
    anchors: &Array2<f64>,
    others: &Array2<f64>,
    tau: f64,
    mode: ContrastiveMode,
) -> Result<f64> {
    if anchors.dim() != others.dim() {
        return Err(Error::DimensionMismatch(format!(
            "projection shapes differ: {:?} vs {:?}",
            anchors.dim(),
            others.dim()
        )));
    }
    if anchors.nrows() < 2 {
        return Err(Error::InvalidArgument(
            "contrastive loss needs at least 2 pairs (no negatives otherwise)".into(),
        ));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument("temperature must be positive".into()));
    }
    let t = anchors.nrows();
    let (unit_a, _) = normalize_rows(anchors);
    let (unit_o, _) = normalize_rows(others);
    let sims = unit_a.dot(&unit_o.t());
    let mut loss = 0.0;
    for i in 0..t {
        let mut max = f64::NEG_INFINITY;
        for j in 0..t {
            if mode == ContrastiveMode::StrictPaper && j == i {
                continue;
            }
            max = max.max(sims[[i, j]] / tau);
        }
        let mut denom = 0.0;
        for j in 0..t {
            if mode == ContrastiveMode::StrictPaper && j == i {
                continue;
            }
            denom += ((sims[[i, j]] / tau) - max).exp();
        }
        loss += -sims[[i, i]] / tau + max + denom.ln();
    }
    Ok(loss)
}

/// Wet-anchored loss and gradients for one direction.
fn contrastive_direction(
    anchors: &Array2<f64>,
    others: &Array2<f64>,
    tau: f64,
    mode: ContrastiveMode,
) -> (f64, Array2<f64>, Array2<f64>) {
    let t = anchors.nrows();
    let (unit_a, norms_a) = normalize_rows(anchors);
    let (unit_o, norms_o) = normalize_rows(others);
    let sims = unit_a.dot(&unit_o.t());

    let mut loss = 0.0;
    let mut coeff = Array2::<f64>::zeros((t, t));
    for i in 0..t {
        let mut max = f64::NEG_INFINITY;
        for j in 0..t {
            if mode == ContrastiveMode::StrictPaper && j == i {
                continue;
            }
            max = max.max(sims[[i, j]] / tau);
        }
        let mut denom = 0.0;
        for j in 0..t {
            if mode == ContrastiveMode::StrictPaper && j == i {
                continue;
            }
            denom += ((sims[[i, j]] / tau) - max).exp();
        }
        let lse = max + denom.ln();
        loss += -sims[[i, i]] / tau + lse;
        for j in 0..t {
            let in_denominator = mode == ContrastiveMode::InclusivePositive || j != i;
            let mut g = 0.0;
            if in_denominator {
                g += ((sims[[i, j]] / tau) - lse).exp();
            }
            if j == i {
                g -= 1.0;
            }
            coeff[[i, j]] = g / tau;
        }
    }

    // dS/danchor_i = (unit_o_j - s_ij unit_a_i) / |anchor_i|, and symmetrically
    // for the other side; assembled with two matmuls plus row corrections.
    let row_dots: Vec<f64> = (0..t)
        .map(|i| (0..t).map(|j| coeff[[i, j]] * sims[[i, j]]).sum())
        .collect();
    let col_dots: Vec<f64> = (0..t)
        .map(|j| (0..t).map(|i| coeff[[i, j]] * sims[[i, j]]).sum())
        .collect();

    let mut d_anchor = coeff.dot(&unit_o);
    for (i, mut row) in d_anchor.rows_mut().into_iter().enumerate() {
        if norms_a[i] == 0.0 {
            row.fill(0.0);
            continue;
        }
        row.scaled_add(-row_dots[i], &unit_a.row(i));
        row.mapv_inplace(|v| v / norms_a[i]);
    }
    let mut d_other = coeff.t().dot(&unit_a);
    for (j, mut row) in d_other.rows_mut().into_iter().enumerate() {
        if norms_o[j] == 0.0 {
            row.fill(0.0);
            continue;
        }
        row.scaled_add(-col_dots[j], &unit_o.row(j));
        row.mapv_inplace(|v| v / norms_o[j]);
    }
    (loss, d_anchor, d_other)
}

/// Contrastive alignment loss over paired projections (forward only).
pub fn contrastive_loss(
    proj_wet: &Array2<f64>,
    proj_dry: &Array2<f64>,
    tau: f64,
    mode: ContrastiveMode,
) -> Result<f64> {
    contrastive_loss_grad(proj_wet, proj_dry, tau, mode, false).map(|(l, _, _)| l)
}

/// Contrastive loss with gradients for both projection matrices.
pub fn contrastive_loss_grad(
    proj_wet: &Array2<f64>,
    proj_dry: &Array2<f64>,
    tau: f64,
    mode: ContrastiveMode,
    symmetric: bool,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    if proj_wet.dim() != proj_dry.dim() {
        return Err(Error::DimensionMismatch(format!(
            "projection shapes differ: {:?} vs {:?}",
            proj_wet.dim(),
            proj_dry.dim()
        )));
    }
    if proj_wet.nrows() < 2 {
        return Err(Error::InvalidArgument(
            "contrastive loss needs at least 2 pairs (no negatives otherwise)".into(),
        ));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument("temperature must be positive".into()));
    }
    let (mut loss, mut d_wet, mut d_dry) = contrastive_direction(proj_wet, proj_dry, tau, mode);
    if symmetric {
        let (loss_b, d_dry_b, d_wet_b) = contrastive_direction(proj_dry, proj_wet, tau, mode);
        loss += loss_b;
        d_wet += &d_wet_b;
        d_dry += &d_dry_b;
    }
    Ok((loss, d_wet, d_dry))
}

/// Identity of one segment within its dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SegmentRef {
    pub subject: u32,
    pub block: u32,
    pub trial: u32,
    pub segment_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairMeta {
    pub wet: SegmentRef,
    pub dry: SegmentRef,
    pub label: usize,
}

/// Aligned (wet, dry, label) rows; row i of both matrices is a positive pair
/// and all other rows serve as its negatives.
#[derive(Debug, Clone)]
pub struct PairedBatch {
    pub wet: Array2<f64>,
    pub dry: Array2<f64>,
    pub labels: Vec<usize>,
    pub meta: Vec<PairMeta>,
}

impl PairedBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn check(&self) -> Result<()> {
        if self.wet.nrows() != self.labels.len()
            || self.dry.nrows() != self.labels.len()
            || self.meta.len() != self.labels.len()
        {
            return Err(Error::DimensionMismatch(
                "paired batch rows, labels and metadata disagree".into(),
            ));
        }
        if self.meta.iter().zip(&self.labels).any(|(m, &l)| m.label != l) {
            return Err(Error::InvalidArgument("pair metadata label mismatch".into()));
        }
        Ok(())
    }

    fn select(&self, rows: &[usize]) -> PairedBatch {
        PairedBatch {
            wet: self.wet.select(Axis(0), rows),
            dry: self.dry.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            meta: rows.iter().map(|&r| self.meta[r]).collect(),
        }
    }

    fn merge(batches: &[PairedBatch]) -> PairedBatch {
        let total: usize = batches.iter().map(|b| b.len()).sum();
        let wet_dim = batches[0].wet.ncols();
        let dry_dim = batches[0].dry.ncols();
        let mut wet = Array2::zeros((total, wet_dim));
        let mut dry = Array2::zeros((total, dry_dim));
        let mut labels = Vec::with_capacity(total);
        let mut meta = Vec::with_capacity(total);
        let mut row = 0;
        for b in batches {
            for i in 0..b.len() {
                wet.row_mut(row).assign(&b.wet.row(i));
                dry.row_mut(row).assign(&b.dry.row(i));
                labels.push(b.labels[i]);
                meta.push(b.meta[i]);
                row += 1;
            }
        }
        PairedBatch { wet, dry, labels, meta }
    }
}

/// How wet and dry segments are matched into positive pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairingStrategy {
    /// Same subject, same (block, trial, segment) timestamp.
    IntraSubject,
    /// One fixed wet subject paired to every dry subject by
    /// (label, chronological rank within that label).
    InterSubjectOneToOne { wet_subject: u32 },
    /// Rank matching of an external wet pool against each dry subject,
    /// over a shared (already re-coded) label set.
    InterDataset,
}

struct SegmentRow {
    reference: SegmentRef,
    label: usize,
    row: Vec<f64>,
}

fn collect_rows(tensors: &[FeatureTensor], mask: &[Band]) -> Result<Vec<SegmentRow>> {
    let mut rows = Vec::new();
    for tensor in tensors {
        let flat = flatten_features(tensor, mask)?;
        for seg in 0..tensor.n_segments() {
            rows.push(SegmentRow {
                reference: SegmentRef {
                    subject: tensor.subject_id,
                    block: tensor.block_id,
                    trial: tensor.trial_id,
                    segment_index: seg,
                },
                label: tensor.labels[seg],
                row: flat.row(seg).to_vec(),
            });
        }
    }
    rows.sort_by_key(|r| r.reference);
    if let Some(first) = rows.first() {
        let dim = first.row.len();
        if rows.iter().any(|r| r.row.len() != dim) {
            return Err(Error::DimensionMismatch(
                "feature tensors disagree on flattened dimension".into(),
            ));
        }
    }
    Ok(rows)
}

fn batch_from_pairs(pairs: Vec<(SegmentRow, SegmentRow)>) -> PairedBatch {
    let n = pairs.len();
    let wet_dim = pairs.first().map(|(w, _)| w.row.len()).unwrap_or(0);
    let dry_dim = pairs.first().map(|(_, d)| d.row.len()).unwrap_or(0);
    let mut wet = Array2::zeros((n, wet_dim));
    let mut dry = Array2::zeros((n, dry_dim));
    let mut labels = Vec::with_capacity(n);
    let mut meta = Vec::with_capacity(n);
    for (i, (w, d)) in pairs.into_iter().enumerate() {
        wet.row_mut(i).assign(&ndarray::ArrayView1::from(&w.row));
        dry.row_mut(i).assign(&ndarray::ArrayView1::from(&d.row));
        labels.push(d.label);
        meta.push(PairMeta {
            wet: w.reference,
            dry: d.reference,
            label: d.label,
        });
    }
    PairedBatch { wet, dry, labels, meta }
}

/// Pair a wet pool against per-subject dry segments by (label, rank of the
/// segment within that label's chronological ordering); surplus dropped.
fn rank_match(
    wet_rows: Vec<SegmentRow>,
    dry_rows: Vec<SegmentRow>,
) -> Result<Vec<PairedBatch>> {
    let wet_labels: std::collections::BTreeSet<usize> = wet_rows.iter().map(|r| r.label).collect();
    let dry_labels: std::collections::BTreeSet<usize> = dry_rows.iter().map(|r| r.label).collect();
    if wet_labels.intersection(&dry_labels).next().is_none() {
        return Err(Error::Empty("no common labels between wet and dry pools".into()));
    }

    let mut wet_by_label: BTreeMap<usize, Vec<SegmentRow>> = BTreeMap::new();
    for row in wet_rows {
        wet_by_label.entry(row.label).or_default().push(row);
    }
    let mut dry_by_subject_label: BTreeMap<(u32, usize), Vec<SegmentRow>> = BTreeMap::new();
    for row in dry_rows {
        dry_by_subject_label
            .entry((row.reference.subject, row.label))
            .or_default()
            .push(row);
    }

    let subjects: std::collections::BTreeSet<u32> =
        dry_by_subject_label.keys().map(|(s, _)| *s).collect();
    let mut batches = Vec::new();
    for subject in subjects {
        let mut pairs = Vec::new();
        for (&label, wet_list) in &wet_by_label {
            if let Some(dry_list) = dry_by_subject_label.get(&(subject, label)) {
                let n = wet_list.len().min(dry_list.len());
                for rank in 0..n {
                    let w = &wet_list[rank];
                    let d = &dry_list[rank];
                    pairs.push((
                        SegmentRow {
                            reference: w.reference,
                            label: w.label,
                            row: w.row.clone(),
                        },
                        SegmentRow {
                            reference: d.reference,
                            label: d.label,
                            row: d.row.clone(),
                        },
                    ));
                }
            }
        }
        if !pairs.is_empty() {
            batches.push(batch_from_pairs(pairs));
        }
    }
    if batches.is_empty() {
        return Err(Error::Empty("pairing produced no batches".into()));
    }
    Ok(batches)
}

/// Build positive-pair batches from wet and dry feature tensors.
///
/// Batches are grouped per dry subject; every emitted pair has matching
/// labels by construction.
pub fn build_pairs(
    wet: &[FeatureTensor],
    dry: &[FeatureTensor],
    strategy: &PairingStrategy,
    mask: &[Band],
) -> Result<Vec<PairedBatch>> {
    let wet_rows = collect_rows(wet, mask)?;
    let dry_rows = collect_rows(dry, mask)?;
    if wet_rows.is_empty() || dry_rows.is_empty() {
        return Err(Error::Empty("no segments available for pairing".into()));
    }

    match strategy {
        PairingStrategy::IntraSubject => {
            let mut wet_index: BTreeMap<SegmentRef, SegmentRow> = BTreeMap::new();
            for row in wet_rows {
                wet_index.insert(row.reference, row);
            }
            let mut per_subject: BTreeMap<u32, Vec<(SegmentRow, SegmentRow)>> = BTreeMap::new();
            for dry_row in dry_rows {
                if let Some(wet_row) = wet_index.remove(&dry_row.reference) {
                    if wet_row.label != dry_row.label {
                        return Err(Error::InvalidArgument(format!(
                            "label mismatch at {:?}: wet {} vs dry {}",
                            dry_row.reference, wet_row.label, dry_row.label
                        )));
                    }
                    per_subject
                        .entry(dry_row.reference.subject)
                        .or_default()
                        .push((wet_row, dry_row));
                }
            }
            let batches: Vec<PairedBatch> =
                per_subject.into_values().map(batch_from_pairs).collect();
            if batches.is_empty() {
                return Err(Error::Empty("no aligned wet/dry segments found".into()));
            }
            Ok(batches)
        }
        PairingStrategy::InterSubjectOneToOne { wet_subject } => {
            let wet_pool: Vec<SegmentRow> = wet_rows
                .into_iter()
                .filter(|r| r.reference.subject == *wet_subject)
                .collect();
            if wet_pool.is_empty() {
                return Err(Error::Empty(format!(
                    "wet subject {wet_subject} has no segments"
                )));
            }
            rank_match(wet_pool, dry_rows)
        }
        PairingStrategy::InterDataset => rank_match(wet_rows, dry_rows),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub wet_ce: f64,
    pub dry_ce: f64,
    pub contrastive: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochLoss>,
    pub stopped_early: bool,
}

/// Loss-improvement threshold and patience of the early-stopping rule.
const EARLY_STOP_DELTA: f64 = 1e-6;
const EARLY_STOP_PATIENCE: usize = 200;

/// Train the model with RMSprop on the joint loss. Deterministic for a fixed
/// config seed; epochs shuffle batch order and rows with a derived stream.
pub fn train(model: &mut DecanModel, batches: &[PairedBatch]) -> Result<TrainHistory> {
    if batches.is_empty() {
        return Err(Error::Empty("no training batches".into()));
    }
    for b in batches {
        b.check()?;
    }
    let cfg = model.config.clone();
    let merged;
    let groups: &[PairedBatch] = if cfg.mix_subject_batches {
        merged = [PairedBatch::merge(batches)];
        &merged
    } else {
        batches
    };

    let mut state = RmspropState::new(&model.layers, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5EED_7EA1));
    let mut history = TrainHistory::default();
    let mut best = f64::INFINITY;
    let mut stall = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..groups.len()).collect();
        order.shuffle(&mut rng);

        let mut sums = LossComponents {
            total: 0.0,
            wet_ce: 0.0,
            dry_ce: 0.0,
            contrastive: 0.0,
        };
        let mut n_minibatches = 0usize;
        for &gi in &order {
            let group = &groups[gi];
            let mut rows: Vec<usize> = (0..group.len()).collect();
            rows.shuffle(&mut rng);
            for chunk in rows.chunks(cfg.batch_size) {
                if chunk.len() < 2 {
                    continue; // a lone pair has no negatives
                }
                let minibatch = group.select(chunk);
                let (components, grads) = model.loss_and_grads(&minibatch)?;
                if !components.total.is_finite() {
                    let component = [
                        ("wet_ce", components.wet_ce),
                        ("dry_ce", components.dry_ce),
                        ("contrastive", components.contrastive),
                        ("total", components.total),
                    ]
                    .iter()
                    .find(|(_, v)| !v.is_finite())
                    .map(|(n, _)| n.to_string())
                    .unwrap_or_else(|| "total".into());
                    let max_grad = grads.iter().map(|g| g.max_abs()).fold(0.0, f64::max);
                    return Err(Error::TrainingDiverged {
                        epoch,
                        component,
                        max_grad,
                    });
                }
                state.step(&mut model.layers, &grads)?;
                sums.total += components.total;
                sums.wet_ce += components.wet_ce;
                sums.dry_ce += components.dry_ce;
                sums.contrastive += components.contrastive;
                n_minibatches += 1;
            }
        }
        let n = n_minibatches.max(1) as f64;
        let record = EpochLoss {
            epoch,
            total: sums.total / n,
            wet_ce: sums.wet_ce / n,
            dry_ce: sums.dry_ce / n,
            contrastive: sums.contrastive / n,
        };
        history.epochs.push(record);

        if record.total < best - EARLY_STOP_DELTA {
            best = record.total;
            stall = 0;
        } else {
            stall += 1;
            if stall >= EARLY_STOP_PATIENCE {
                history.stopped_early = true;
                break;
            }
        }
    }
    Ok(history)
}

/// Finite-difference sweep over every parameter of the model against the
/// analytic gradients of the joint loss. Returns the worst relative error.
pub fn finite_difference_check(model: &DecanModel, batch: &PairedBatch, h: f64) -> Result<f64> {
    let (_, analytic) = model.loss_and_grads(batch)?;

    // (layer, weight?, start, end) chunks keep the parallel sweep balanced
    // without cloning the model per slot.
    const CHUNK: usize = 512;
    let mut chunks: Vec<(usize, bool, usize, usize)> = Vec::new();
    for (li, layer) in model.layers.iter().enumerate() {
        let n_w = layer.weight.len();
        let mut start = 0;
        while start < n_w {
            chunks.push((li, true, start, (start + CHUNK).min(n_w)));
            start += CHUNK;
        }
        let n_b = layer.bias.len();
        let mut start = 0;
        while start < n_b {
            chunks.push((li, false, start, (start + CHUNK).min(n_b)));
            start += CHUNK;
        }
    }

    let errors = crate::par::try_map(&chunks, |&(li, is_weight, start, end)| -> Result<f64> {
        let mut m = model.clone();
        let mut worst = 0.0f64;
        for idx in start..end {
            let original = {
                let layer = &mut m.layers[li];
                let slot = if is_weight {
                    &mut layer.weight.as_slice_mut().unwrap()[idx]
                } else {
                    &mut layer.bias.as_slice_mut().unwrap()[idx]
                };
                let v = *slot;
                *slot = v + h;
                v
            };
            let plus = m.total_loss(batch)?.total;
            {
                let layer = &mut m.layers[li];
                let slot = if is_weight {
                    &mut layer.weight.as_slice_mut().unwrap()[idx]
                } else {
                    &mut layer.bias.as_slice_mut().unwrap()[idx]
                };
                *slot = original - h;
            }
            let minus = m.total_loss(batch)?.total;
            {
                let layer = &mut m.layers[li];
                let slot = if is_weight {
                    &mut layer.weight.as_slice_mut().unwrap()[idx]
                } else {
                    &mut layer.bias.as_slice_mut().unwrap()[idx]
                };
                *slot = original;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = if is_weight {
                analytic[li].weight.as_slice().unwrap()[idx]
            } else {
                analytic[li].bias.as_slice().unwrap()[idx]
            };
            worst = worst.max(crate::network::gradient_relative_error(a, numeric));
        }
        Ok(worst)
    })?;
    Ok(errors.into_iter().fold(0.0, f64::max))
}
