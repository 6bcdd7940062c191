//! Minimal dense-network engine: linear layers, ReLU, softmax cross-entropy,
//! reverse-mode gradients, RMSprop, and finite-difference gradient checking.
//!
//! All arithmetic is f64. Layers are held in arenas (plain `Vec`s) and graphs
//! are expressed as paths of layer references; using the same layer at two
//! sites shares its parameters, and gradient accumulation sums the per-site
//! contributions.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Identity => z.clone(),
        }
    }

    fn derivative(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }),
            Activation::Identity => Array2::ones(z.dim()),
        }
    }
}

/// A fully connected layer: `y = act(W x + b)` with `W` of shape out x in.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
    /// Layers reached through several paths carry a tag naming the shared
    /// parameter storage; recorded in checkpoints.
    pub shared_tag: Option<String>,
}

impl DenseLayer {
    /// Glorot-uniform initialization from the supplied generator.
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = Array2::from_shape_fn((out_dim, in_dim), |_| rng.random_range(-limit..limit));
        DenseLayer {
            weight,
            bias: Array1::zeros(out_dim),
            activation,
            shared_tag: None,
        }
    }

    pub fn with_tag(mut self, tag: &str) -> Self {
        self.shared_tag = Some(tag.to_string());
        self
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Gradient (or squared-gradient accumulator) matching one layer's shape.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LayerGrad {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        LayerGrad {
            weight: Array2::zeros(layer.weight.dim()),
            bias: Array1::zeros(layer.bias.dim()),
        }
    }

    pub fn accumulate(&mut self, other: &LayerGrad) {
        self.weight += &other.weight;
        self.bias += &other.bias;
    }

    pub fn max_abs(&self) -> f64 {
        let w = self.weight.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.bias.iter().fold(w, |m, v| m.max(v.abs()))
    }
}

/// Per-site cache of one forward pass through a path of layers.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each site.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation at each site.
    preacts: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

/// Run `input` through an ordered path of layers, caching per-site state.
pub fn forward_path(path: &[&DenseLayer], input: &Array2<f64>) -> Result<ForwardCache> {
    let mut inputs = Vec::with_capacity(path.len());
    let mut preacts = Vec::with_capacity(path.len());
    let mut x = input.clone();
    for layer in path {
        if x.ncols() != layer.in_dim() {
            return Err(Error::DimensionMismatch(format!(
                "layer expects {} inputs, got {}",
                layer.in_dim(),
                x.ncols()
            )));
        }
        let z = x.dot(&layer.weight.t()) + &layer.bias;
        let y = layer.activation.apply(&z);
        inputs.push(x);
        preacts.push(z);
        x = y;
    }
    Ok(ForwardCache {
        inputs,
        preacts,
        output: x,
    })
}

/// Reverse-mode pass through a cached path. Returns per-site gradients
/// (ordered like the path) and the gradient with respect to the path input.
pub fn backward_path(
    path: &[&DenseLayer],
    cache: &ForwardCache,
    upstream: &Array2<f64>,
) -> Result<(Vec<LayerGrad>, Array2<f64>)> {
    if cache.inputs.len() != path.len() {
        return Err(Error::DimensionMismatch(
            "forward cache does not match path length".into(),
        ));
    }
    let mut grads: Vec<LayerGrad> = path.iter().map(|l| LayerGrad::zeros_like(l)).collect();
    let mut delta = upstream.clone();
    for site in (0..path.len()).rev() {
        let layer = path[site];
        if delta.dim() != cache.preacts[site].dim() {
            return Err(Error::DimensionMismatch(format!(
                "upstream gradient shape {:?} does not match site output {:?}",
                delta.dim(),
                cache.preacts[site].dim()
            )));
        }
        let dz = &delta * &layer.activation.derivative(&cache.preacts[site]);
        grads[site].weight = dz.t().dot(&cache.inputs[site]);
        grads[site].bias = dz.sum_axis(Axis(0));
        delta = dz.dot(&layer.weight);
    }
    Ok((grads, delta))
}

/// Numerically stable softmax over rows.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean negative log-likelihood and its gradient with respect to the logits.
pub fn softmax_cross_entropy(
    logits: &Array2<f64>,
    targets: &[usize],
) -> Result<(f64, Array2<f64>)> {
    let (n, k) = logits.dim();
    if targets.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} logit rows but {} targets",
            targets.len()
        )));
    }
    if n == 0 {
        return Err(Error::Empty("empty batch".into()));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::InvalidArgument(format!(
            "target class {bad} out of range for {k} classes"
        )));
    }
    // A fully underflowed target probability yields an infinite loss; the
    // training loop treats that as divergence rather than clamping it away.
    let probs = softmax(logits);
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        loss -= probs[[i, t]].ln();
    }
    loss /= n as f64;
    let mut grad = probs;
    for (i, &t) in targets.iter().enumerate() {
        grad[[i, t]] -= 1.0;
    }
    grad.mapv_inplace(|v| v / n as f64);
    Ok((loss, grad))
}

/// RMSprop accumulator aligned with an arena of layers.
#[derive(Debug, Clone)]
pub struct RmspropState {
    v: Vec<LayerGrad>,
    pub rho: f64,
    pub learning_rate: f64,
    pub epsilon: f64,
}

impl RmspropState {
    pub fn new(layers: &[DenseLayer], learning_rate: f64) -> Self {
        RmspropState {
            v: layers.iter().map(LayerGrad::zeros_like).collect(),
            rho: 0.9,
            learning_rate,
            epsilon: 1e-8,
        }
    }

    pub fn step(&mut self, layers: &mut [DenseLayer], grads: &[LayerGrad]) -> Result<()> {
        if layers.len() != grads.len() || layers.len() != self.v.len() {
            return Err(Error::DimensionMismatch(
                "optimizer state does not match layer arena".into(),
            ));
        }
        for ((layer, grad), v) in layers.iter_mut().zip(grads).zip(&mut self.v) {
            if layer.weight.dim() != grad.weight.dim() || layer.bias.dim() != grad.bias.dim() {
                return Err(Error::DimensionMismatch("gradient shape mismatch".into()));
            }
            rmsprop_update(
                layer.weight.as_slice_mut().unwrap(),
                grad.weight.as_slice().unwrap(),
                v.weight.as_slice_mut().unwrap(),
                self.rho,
                self.learning_rate,
                self.epsilon,
            );
            rmsprop_update(
                layer.bias.as_slice_mut().unwrap(),
                grad.bias.as_slice().unwrap(),
                v.bias.as_slice_mut().unwrap(),
                self.rho,
                self.learning_rate,
                self.epsilon,
            );
        }
        Ok(())
    }
}

/// Elementwise update: `v <- rho v + (1-rho) g^2; theta <- theta - lr g/(sqrt(v)+eps)`.
pub fn rmsprop_update(theta: &mut [f64], grad: &[f64], v: &mut [f64], rho: f64, lr: f64, eps: f64) {
    for i in 0..theta.len() {
        v[i] = rho * v[i] + (1.0 - rho) * grad[i] * grad[i];
        theta[i] -= lr * grad[i] / (v[i].sqrt() + eps);
    }
}

/// A plain feed-forward stack over its own layer arena.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    /// `dims = [in, h1, ..., out]`; hidden layers use ReLU, the head is linear.
    pub fn new(dims: &[usize], rng: &mut impl Rng) -> Result<Mlp> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument("an MLP needs at least one layer".into()));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 2 == dims.len() {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                DenseLayer::new(w[0], w[1], act, rng)
            })
            .collect();
        Ok(Mlp { layers })
    }

    fn path(&self) -> Vec<&DenseLayer> {
        self.layers.iter().collect()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<ForwardCache> {
        forward_path(&self.path(), x)
    }

    pub fn logits(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x)?.output)
    }

    pub fn predict_proba(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    /// One full-batch cross-entropy step; returns the loss before the update.
    /// `l2` adds `l2 * w` to each weight gradient (biases excluded).
    pub fn train_epoch(
        &mut self,
        x: &Array2<f64>,
        targets: &[usize],
        state: &mut RmspropState,
        l2: f64,
    ) -> Result<f64> {
        let cache = self.forward(x)?;
        let (loss, dlogits) = softmax_cross_entropy(&cache.output, targets)?;
        let (mut grads, _) = backward_path(&self.path(), &cache, &dlogits)?;
        if l2 > 0.0 {
            for (g, layer) in grads.iter_mut().zip(&self.layers) {
                g.weight.scaled_add(l2, &layer.weight);
            }
        }
        state.step(&mut self.layers, &grads)?;
        Ok(loss)
    }
}

/// Relative gradient-check error as used throughout the test suites.
pub fn gradient_relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + 1e-8)
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerSpec {
    name: String,
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    shared_tag: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    layers: Vec<LayerSpec>,
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    extra: Option<serde_json::Value>,
}

/// Write named layers as a one-line JSON header plus a float32 payload per
/// parameter (weights row-major, then bias) in declaration order.
pub fn save_checkpoint(
    path: &Path,
    named_layers: &[(&str, &DenseLayer)],
    seed: u64,
    extra: Option<serde_json::Value>,
) -> Result<()> {
    let header = CheckpointHeader {
        layers: named_layers
            .iter()
            .map(|(name, l)| LayerSpec {
                name: name.to_string(),
                in_dim: l.in_dim(),
                out_dim: l.out_dim(),
                activation: l.activation,
                shared_tag: l.shared_tag.clone(),
            })
            .collect(),
        seed,
        extra,
    };
    let mut bytes = serde_json::to_string(&header).expect("header serializes").into_bytes();
    bytes.push(b'\n');
    for (_, layer) in named_layers {
        for &v in layer.weight.iter() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for &v in layer.bias.iter() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, &bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(
    path: &Path,
) -> Result<(Vec<(String, DenseLayer)>, u64, Option<serde_json::Value>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let newline = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Malformed {
        path: path.display().to_string(),
        detail: "missing header line".into(),
    })?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| Error::Malformed {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
    let mut off = newline + 1;
    let read_f32 = |off: &mut usize| -> Result<f64> {
        if *off + 4 > bytes.len() {
            return Err(Error::Malformed {
                path: path.display().to_string(),
                detail: "truncated payload".into(),
            });
        }
        let v = f32::from_le_bytes([bytes[*off], bytes[*off + 1], bytes[*off + 2], bytes[*off + 3]]);
        *off += 4;
        Ok(f64::from(v))
    };
    let mut layers = Vec::with_capacity(header.layers.len());
    for spec in &header.layers {
        let mut weight = Array2::<f64>::zeros((spec.out_dim, spec.in_dim));
        for v in weight.iter_mut() {
            *v = read_f32(&mut off)?;
        }
        let mut bias = Array1::<f64>::zeros(spec.out_dim);
        for v in bias.iter_mut() {
            *v = read_f32(&mut off)?;
        }
        layers.push((
            spec.name.clone(),
            DenseLayer {
                weight,
                bias,
                activation: spec.activation,
                shared_tag: spec.shared_tag.clone(),
            },
        ));
    }
    if off != bytes.len() {
        return Err(Error::Malformed {
            path: path.display().to_string(),
            detail: format!("{} trailing bytes", bytes.len() - off),
        });
    }
    Ok((layers, header.seed, header.extra))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = DenseLayer {
            weight: Array2::eye(3),
            bias: Array1::zeros(3),
            activation: Activation::Identity,
            shared_tag: None,
        };
        let x = array![[1.0, -2.0, 3.0], [0.5, 0.0, -0.5]];
        let cache = forward_path(&[&layer], &x).unwrap();
        assert_eq!(cache.output, x);
    }

    #[test]
    fn relu_clamps_negatives() {
        let layer = DenseLayer {
            weight: Array2::eye(2),
            bias: Array1::zeros(2),
            activation: Activation::Relu,
            shared_tag: None,
        };
        let cache = forward_path(&[&layer], &array![[-1.0, 2.0]]).unwrap();
        assert_eq!(cache.output, array![[0.0, 2.0]]);
    }

    #[test]
    fn two_layer_forward_matches_hand_computation() {
        let l1 = DenseLayer {
            weight: array![[1.0, 2.0], [0.0, -1.0]],
            bias: array![0.5, 0.0],
            activation: Activation::Relu,
            shared_tag: None,
        };
        let l2 = DenseLayer {
            weight: array![[1.0, 1.0]],
            bias: array![-1.0],
            activation: Activation::Identity,
            shared_tag: None,
        };
        // x = [1, 2]: z1 = [1+4+0.5, -2] = [5.5, -2] -> relu [5.5, 0]
        // z2 = 5.5 + 0 - 1 = 4.5
        let cache = forward_path(&[&l1, &l2], &array![[1.0, 2.0]]).unwrap();
        assert_abs_diff_eq!(cache.output[[0, 0]], 4.5, epsilon = 1e-12);
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let layer = DenseLayer {
            weight: Array2::eye(3),
            bias: Array1::zeros(3),
            activation: Activation::Identity,
            shared_tag: None,
        };
        assert!(forward_path(&[&layer], &array![[1.0, 2.0]]).is_err());
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = Array2::zeros((3, 5));
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 3, 4]).unwrap();
        assert_abs_diff_eq!(loss, 5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn cross_entropy_single_spike() {
        let logits = array![[1.0, 0.0, 0.0, 0.0, 0.0]];
        let (loss, _) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert_abs_diff_eq!(loss, (std::f64::consts::E + 4.0).ln() - 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cross_entropy_confident_limit() {
        let mut logits = Array2::zeros((1, 5));
        logits[[0, 2]] = 100.0;
        let (loss, _) = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!(loss < 1e-6);
    }

    #[test]
    fn cross_entropy_rejects_bad_targets() {
        let logits = Array2::zeros((1, 5));
        assert!(softmax_cross_entropy(&logits, &[5]).is_err());
    }

    /// Central difference of the CE loss wrt one parameter slot of a clone.
    fn numeric_grad(
        mlp: &Mlp,
        x: &Array2<f64>,
        targets: &[usize],
        layer: usize,
        weight_idx: Option<usize>,
        bias_idx: Option<usize>,
    ) -> f64 {
        let h = 1e-5;
        let eval = |delta: f64| {
            let mut m = mlp.clone();
            if let Some(idx) = weight_idx {
                m.layers[layer].weight.as_slice_mut().unwrap()[idx] += delta;
            }
            if let Some(idx) = bias_idx {
                m.layers[layer].bias.as_slice_mut().unwrap()[idx] += delta;
            }
            softmax_cross_entropy(&m.logits(x).unwrap(), targets).unwrap().0
        };
        (eval(h) - eval(-h)) / (2.0 * h)
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mlp = Mlp::new(&[4, 8, 3], &mut rng).unwrap();
        let x = Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0));
        let targets = vec![0usize, 1, 2, 0, 1, 2];

        let cache = mlp.forward(&x).unwrap();
        let (_, dlogits) = softmax_cross_entropy(&cache.output, &targets).unwrap();
        let path: Vec<&DenseLayer> = mlp.layers.iter().collect();
        let (grads, _) = backward_path(&path, &cache, &dlogits).unwrap();

        for li in 0..mlp.layers.len() {
            for idx in 0..mlp.layers[li].weight.len() {
                let analytic = grads[li].weight.as_slice().unwrap()[idx];
                let numeric = numeric_grad(&mlp, &x, &targets, li, Some(idx), None);
                assert!(
                    gradient_relative_error(analytic, numeric) < 1e-4,
                    "layer {li} weight {idx}: analytic {analytic}, numeric {numeric}"
                );
            }
            for idx in 0..mlp.layers[li].bias.len() {
                let analytic = grads[li].bias.as_slice().unwrap()[idx];
                let numeric = numeric_grad(&mlp, &x, &targets, li, None, Some(idx));
                assert!(
                    gradient_relative_error(analytic, numeric) < 1e-4,
                    "layer {li} bias {idx}"
                );
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(&[3, 4, 2], &mut rng).unwrap();
        let x = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let path: Vec<&DenseLayer> = mlp.layers.iter().collect();
        let cache = forward_path(&path, &x).unwrap();
        let (grads, dx) = backward_path(&path, &cache, &Array2::zeros((5, 2))).unwrap();
        for g in grads {
            assert_eq!(g.max_abs(), 0.0);
        }
        assert_eq!(dx.iter().fold(0.0f64, |m, v| m.max(v.abs())), 0.0);
    }

    #[test]
    fn shared_layer_gradient_is_sum_of_site_gradients() {
        // One 2->2 layer used twice in sequence: y = f(f(x)).
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let shared = DenseLayer::new(2, 2, Activation::Relu, &mut rng).with_tag("shared");
        let x = array![[0.7, -0.3], [0.2, 0.9]];
        let targets = vec![0usize, 1];

        let loss_of = |layer: &DenseLayer| {
            let path = [layer, layer];
            let cache = forward_path(&path, &x).unwrap();
            softmax_cross_entropy(&cache.output, &targets).unwrap().0
        };

        let path = [&shared, &shared];
        let cache = forward_path(&path, &x).unwrap();
        let (_, dlogits) = softmax_cross_entropy(&cache.output, &targets).unwrap();
        let (site_grads, _) = backward_path(&path, &cache, &dlogits).unwrap();
        let mut total = site_grads[0].clone();
        total.accumulate(&site_grads[1]);

        let h = 1e-5;
        for idx in 0..shared.weight.len() {
            let analytic = total.weight.as_slice().unwrap()[idx];
            let eval = |delta: f64| {
                let mut l = shared.clone();
                l.weight.as_slice_mut().unwrap()[idx] += delta;
                loss_of(&l)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            assert!(
                gradient_relative_error(analytic, numeric) < 1e-4,
                "shared weight {idx}: {analytic} vs {numeric}"
            );
        }
    }

    #[test]
    fn rmsprop_first_step_value() {
        let mut theta = [0.0f64];
        let mut v = [0.0f64];
        rmsprop_update(&mut theta, &[1.0], &mut v, 0.9, 0.01, 1e-8);
        assert_abs_diff_eq!(v[0], 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(theta[0], -0.0316228, epsilon = 1e-6);
    }

    #[test]
    fn rmsprop_second_step_value() {
        let mut theta = [0.0f64];
        let mut v = [0.0f64];
        rmsprop_update(&mut theta, &[1.0], &mut v, 0.9, 0.01, 1e-8);
        let before = theta[0];
        rmsprop_update(&mut theta, &[1.0], &mut v, 0.9, 0.01, 1e-8);
        assert_abs_diff_eq!(v[0], 0.19, epsilon = 1e-12);
        assert_abs_diff_eq!(theta[0] - before, -0.0229416, epsilon = 1e-6);
    }

    #[test]
    fn rmsprop_zero_gradient_decays_accumulator() {
        let mut theta = [1.5f64];
        let mut v = [0.4f64];
        rmsprop_update(&mut theta, &[0.0], &mut v, 0.9, 0.01, 1e-8);
        assert_eq!(theta[0], 1.5);
        assert_abs_diff_eq!(v[0], 0.36, epsilon = 1e-15);
    }

    #[test]
    fn training_loss_decreases_on_separable_toy_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut mlp = Mlp::new(&[2, 8, 2], &mut rng).unwrap();
        let mut x = Array2::zeros((20, 2));
        let mut targets = Vec::new();
        for i in 0..20 {
            let class = i % 2;
            x[[i, 0]] = if class == 0 { -1.0 } else { 1.0 } + 0.05 * rng.random_range(-1.0..1.0);
            x[[i, 1]] = rng.random_range(-0.2..0.2);
            targets.push(class);
        }
        let mut state = RmspropState::new(&mlp.layers, 1e-3);
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            let loss = mlp.train_epoch(&x, &targets, &mut state, 0.0).unwrap();
            assert!(loss <= last + 1e-12, "loss went up: {last} -> {loss}");
            last = loss;
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let l1 = DenseLayer::new(3, 4, Activation::Relu, &mut rng).with_tag("trunk1");
        let l2 = DenseLayer::new(4, 2, Activation::Identity, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &[("a", &l1), ("b", &l2)], 23, None).unwrap();
        let (loaded, seed, extra) = load_checkpoint(&path).unwrap();
        assert_eq!(seed, 23);
        assert!(extra.is_none());
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "a");
        assert_eq!(loaded[0].1.shared_tag.as_deref(), Some("trunk1"));
        for (orig, (_, got)) in [&l1, &l2].iter().zip(&loaded) {
            assert_eq!(orig.activation, got.activation);
            for (a, b) in orig.weight.iter().zip(got.weight.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-7);
            }
        }
    }
}
