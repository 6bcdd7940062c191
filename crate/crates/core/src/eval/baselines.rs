//! Reference classifiers trained on dry (or wet) features alone: multinomial
//! logistic regression, one-vs-rest linear SVM with a two-stage C grid, and
//! the plain MLP baseline.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{rmsprop_update, softmax, softmax_cross_entropy, Mlp, RmspropState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Lr,
    #[serde(rename = "svm")]
    LinearSvm,
    Dnn,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Lr => "lr",
            BaselineKind::LinearSvm => "svm",
            BaselineKind::Dnn => "dnn",
        }
    }

    pub fn from_name(name: &str) -> Result<BaselineKind> {
        match name.to_ascii_lowercase().as_str() {
            "lr" => Ok(BaselineKind::Lr),
            "svm" | "linear_svm" => Ok(BaselineKind::LinearSvm),
            "dnn" => Ok(BaselineKind::Dnn),
            other => Err(Error::InvalidArgument(format!("unknown baseline: {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    /// Hidden widths of the MLP baseline; the dry-side default keeps only the
    /// last two encoder widths.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    /// L2 weight penalty of the logistic-regression baseline.
    pub l2: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            kind: BaselineKind::Dnn,
            hidden: vec![64, 32],
            epochs: 300,
            learning_rate: 1e-3,
            l2: 1e-4,
            seed: 7,
        }
    }
}

/// The exponential and linear C search ranges, merged and sorted:
/// 2^-10..2^10 plus 0.1 to 20 in steps of 0.5.
pub fn svm_c_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = (-10..=10).map(|e| 2f64.powi(e)).collect();
    let mut c = 0.1;
    while c <= 20.0 {
        grid.push(c);
        c += 0.5;
    }
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    grid
}

#[derive(Debug, Clone)]
enum Model {
    Linear { weight: Array2<f64>, bias: Array1<f64> },
    Net(Mlp),
}

#[derive(Debug, Clone)]
pub struct TrainedBaseline {
    pub kind: BaselineKind,
    /// For the SVM: the grid value selected by inner cross-validation.
    pub chosen_svm_c: Option<f64>,
    model: Model,
}

impl TrainedBaseline {
    /// Hard predictions plus scores normalized to sum to one per row.
    pub fn predict(&self, features: &Array2<f64>) -> Result<(Vec<usize>, Array2<f64>)> {
        let logits = match &self.model {
            Model::Linear { weight, bias } => features.dot(&weight.t()) + bias,
            Model::Net(mlp) => mlp.logits(features)?,
        };
        let scores = softmax(&logits);
        let predictions = scores
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect();
        Ok((predictions, scores))
    }
}

fn check_training_set(features: &Array2<f64>, labels: &[usize], n_classes: usize) -> Result<()> {
    if features.nrows() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows but {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    if features.nrows() == 0 {
        return Err(Error::Empty("empty training set".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    let mut seen = labels.to_vec();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() < 2 {
        return Err(Error::InvalidArgument(
            "training data contains a single class".into(),
        ));
    }
    Ok(())
}

/// Multinomial softmax regression: zero-initialized, full-batch RMSprop with
/// an L2 penalty on the weights.
fn train_lr(
    features: &Array2<f64>,
    labels: &[usize],
    n_classes: usize,
    cfg: &BaselineConfig,
) -> Model {
    let d = features.ncols();
    let mut weight = Array2::<f64>::zeros((n_classes, d));
    let mut bias = Array1::<f64>::zeros(n_classes);
    let mut v_w = Array2::<f64>::zeros((n_classes, d));
    let mut v_b = Array1::<f64>::zeros(n_classes);
    for _ in 0..cfg.epochs {
        let logits = features.dot(&weight.t()) + &bias;
        let (_, dlogits) = softmax_cross_entropy(&logits, labels).expect("validated inputs");
        let mut d_w = dlogits.t().dot(features);
        d_w.scaled_add(cfg.l2, &weight);
        let d_b = dlogits.sum_axis(Axis(0));
        rmsprop_update(
            weight.as_slice_mut().unwrap(),
            d_w.as_slice().unwrap(),
            v_w.as_slice_mut().unwrap(),
            0.9,
            cfg.learning_rate,
            1e-8,
        );
        rmsprop_update(
            bias.as_slice_mut().unwrap(),
            d_b.as_slice().unwrap(),
            v_b.as_slice_mut().unwrap(),
            0.9,
            cfg.learning_rate,
            1e-8,
        );
    }
    Model::Linear { weight, bias }
}

/// One-vs-rest hinge objective for a fixed C, by full-batch subgradient
/// descent with RMSprop steps. The ridge term is 1/(2 C n).
fn train_svm_for_c(
    features: &Array2<f64>,
    labels: &[usize],
    n_classes: usize,
    c: f64,
    epochs: usize,
    learning_rate: f64,
) -> Model {
    let n = features.nrows();
    let d = features.ncols();
    let lambda = 1.0 / (2.0 * c * n as f64);
    let mut weight = Array2::<f64>::zeros((n_classes, d));
    let mut bias = Array1::<f64>::zeros(n_classes);
    for class in 0..n_classes {
        let y: Vec<f64> = labels
            .iter()
            .map(|&l| if l == class { 1.0 } else { -1.0 })
            .collect();
        let mut w = Array1::<f64>::zeros(d);
        let mut b = 0.0f64;
        let mut v_w = Array1::<f64>::zeros(d);
        let mut v_b = 0.0f64;
        for _ in 0..epochs {
            let margins = features.dot(&w) + b;
            let mut d_w = Array1::<f64>::zeros(d);
            let mut d_b = 0.0;
            for i in 0..n {
                if y[i] * margins[i] < 1.0 {
                    d_w.scaled_add(-y[i] / n as f64, &features.row(i));
                    d_b -= y[i] / n as f64;
                }
            }
            d_w.scaled_add(2.0 * lambda, &w);
            rmsprop_update(
                w.as_slice_mut().unwrap(),
                d_w.as_slice().unwrap(),
                v_w.as_slice_mut().unwrap(),
                0.9,
                learning_rate,
                1e-8,
            );
            rmsprop_update(
                std::slice::from_mut(&mut b),
                &[d_b],
                std::slice::from_mut(&mut v_b),
                0.9,
                learning_rate,
                1e-8,
            );
        }
        weight.row_mut(class).assign(&w);
        bias[class] = b;
    }
    Model::Linear { weight, bias }
}

fn accuracy_of(model: &Model, features: &Array2<f64>, labels: &[usize]) -> f64 {
    let logits = match model {
        Model::Linear { weight, bias } => features.dot(&weight.t()) + bias,
        Model::Net(mlp) => mlp.logits(features).expect("dims fixed"),
    };
    let mut correct = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    correct as f64 / labels.len() as f64
}

/// Select C over the grid by inner 4-fold cross-validation on the training
/// data; ties break toward the smaller C.
fn select_svm_c(
    features: &Array2<f64>,
    labels: &[usize],
    n_classes: usize,
    cfg: &BaselineConfig,
) -> f64 {
    let n = features.nrows();
    let k_folds = 4.min(n);
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xC0FF_EE));
    indices.shuffle(&mut rng);
    let inner_epochs = (cfg.epochs / 2).max(50);

    let mut best_c = svm_c_grid()[0];
    let mut best_acc = f64::NEG_INFINITY;
    for c in svm_c_grid() {
        let mut acc_sum = 0.0;
        let mut used = 0usize;
        for fold in 0..k_folds {
            let val: Vec<usize> = indices
                .iter()
                .copied()
                .skip(fold * n / k_folds)
                .take((fold + 1) * n / k_folds - fold * n / k_folds)
                .collect();
            if val.is_empty() || val.len() == n {
                continue;
            }
            let train: Vec<usize> =
                indices.iter().copied().filter(|i| !val.contains(i)).collect();
            let x_train = features.select(Axis(0), &train);
            let y_train: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
            let x_val = features.select(Axis(0), &val);
            let y_val: Vec<usize> = val.iter().map(|&i| labels[i]).collect();
            let model = train_svm_for_c(
                &x_train,
                &y_train,
                n_classes,
                c,
                inner_epochs,
                cfg.learning_rate,
            );
            acc_sum += accuracy_of(&model, &x_val, &y_val);
            used += 1;
        }
        let acc = if used > 0 { acc_sum / used as f64 } else { 0.0 };
        if acc > best_acc {
            best_acc = acc;
            best_c = c;
        }
    }
    best_c
}

/// Train one of the reference classifiers.
pub fn train_baseline(
    features: &Array2<f64>,
    labels: &[usize],
    n_classes: usize,
    cfg: &BaselineConfig,
) -> Result<TrainedBaseline> {
    check_training_set(features, labels, n_classes)?;
    match cfg.kind {
        BaselineKind::Lr => Ok(TrainedBaseline {
            kind: cfg.kind,
            chosen_svm_c: None,
            model: train_lr(features, labels, n_classes, cfg),
        }),
        BaselineKind::LinearSvm => {
            let c = select_svm_c(features, labels, n_classes, cfg);
            log::info!("linear SVM grid search selected C = {c}");
            Ok(TrainedBaseline {
                kind: cfg.kind,
                chosen_svm_c: Some(c),
                model: train_svm_for_c(
                    features,
                    labels,
                    n_classes,
                    c,
                    cfg.epochs,
                    cfg.learning_rate,
                ),
            })
        }
        BaselineKind::Dnn => {
            let mut dims = vec![features.ncols()];
            dims.extend_from_slice(&cfg.hidden);
            dims.push(n_classes);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut mlp = Mlp::new(&dims, &mut rng)?;
            let mut state = RmspropState::new(&mlp.layers, cfg.learning_rate);
            for _ in 0..cfg.epochs {
                mlp.train_epoch(features, labels, &mut state, 0.0)?;
            }
            Ok(TrainedBaseline {
                kind: cfg.kind,
                chosen_svm_c: None,
                model: Model::Net(mlp),
            })
        }
    }
}
