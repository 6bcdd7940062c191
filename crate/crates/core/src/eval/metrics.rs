//! Classification metrics: accuracy, macro precision/recall/F1, one-vs-rest
//! AUROC (rank statistic, ties at half weight) and AUPRC (step integration),
//! plus the confusion matrix.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auroc: f64,
    pub auprc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub n_classes: usize,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub macro_auroc: f64,
    pub macro_auprc: f64,
    /// confusion[true][predicted]
    pub confusion: Vec<Vec<u64>>,
    /// Classes with no true samples, excluded from the macro averages.
    pub absent_classes: Vec<usize>,
    pub per_class: Vec<ClassMetrics>,
}

/// One-vs-rest AUROC via the Mann-Whitney rank statistic; ties contribute
/// half. Returns `None` when either side is empty.
fn auroc_rank(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].partial_cmp(&scores[j]).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based average rank across the tie group [i, j]
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if positive[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let n_pos_f = n_pos as f64;
    Some((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// One-vs-rest average precision by step integration over distinct score
/// thresholds, descending. Returns `None` when there are no positives.
fn auprc_steps(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap());
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if positive[idx] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / n_pos as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    Some(ap)
}

/// Compute the full metric set from hard predictions, per-class scores (rows
/// summing to one), and true labels.
pub fn compute_metrics(
    predictions: &[usize],
    scores: &Array2<f64>,
    labels: &[usize],
) -> Result<MetricsReport> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::Empty("no samples to score".into()));
    }
    if predictions.len() != n || scores.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} labels but {} predictions and {} score rows",
            predictions.len(),
            scores.nrows()
        )));
    }
    let k = scores.ncols();
    if let Some(&bad) = labels.iter().chain(predictions).find(|&&v| v >= k) {
        return Err(Error::InvalidArgument(format!(
            "class index {bad} out of range for {k} classes"
        )));
    }
    for (i, row) in scores.rows().into_iter().enumerate() {
        if (row.sum() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "score row {i} sums to {}, not 1",
                row.sum()
            )));
        }
    }

    let mut confusion = vec![vec![0u64; k]; k];
    for (&truth, &pred) in labels.iter().zip(predictions) {
        confusion[truth][pred] += 1;
    }
    let correct: u64 = (0..k).map(|c| confusion[c][c]).sum();
    let accuracy = correct as f64 / n as f64;

    let mut per_class = Vec::with_capacity(k);
    let mut absent = Vec::new();
    for class in 0..k {
        let support = labels.iter().filter(|&&l| l == class).count();
        if support == 0 {
            log::warn!("class {class} absent from the test fold; excluded from macro averages");
            absent.push(class);
            continue;
        }
        let tp = confusion[class][class] as f64;
        let fp: u64 = (0..k).filter(|&t| t != class).map(|t| confusion[t][class]).sum();
        let predicted = tp + fp as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = tp / support as f64;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let class_scores: Vec<f64> = scores.column(class).to_vec();
        let positive: Vec<bool> = labels.iter().map(|&l| l == class).collect();
        let auroc = auroc_rank(&class_scores, &positive).unwrap_or_else(|| {
            log::warn!("class {class} has no negatives; AUROC undefined, using 1.0");
            1.0
        });
        let auprc = auprc_steps(&class_scores, &positive).expect("support > 0");
        per_class.push(ClassMetrics {
            class,
            support,
            precision,
            recall,
            f1,
            auroc,
            auprc,
        });
    }
    if per_class.is_empty() {
        return Err(Error::Empty("no class has any test sample".into()));
    }
    let m = per_class.len() as f64;
    Ok(MetricsReport {
        n_samples: n,
        n_classes: k,
        accuracy,
        macro_precision: per_class.iter().map(|c| c.precision).sum::<f64>() / m,
        macro_recall: per_class.iter().map(|c| c.recall).sum::<f64>() / m,
        macro_f1: per_class.iter().map(|c| c.f1).sum::<f64>() / m,
        macro_auroc: per_class.iter().map(|c| c.auroc).sum::<f64>() / m,
        macro_auprc: per_class.iter().map(|c| c.auprc).sum::<f64>() / m,
        confusion,
        absent_classes: absent,
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_hot_scores(predictions: &[usize], k: usize) -> Array2<f64> {
        let mut scores = Array2::zeros((predictions.len(), k));
        for (i, &p) in predictions.iter().enumerate() {
            scores[[i, p]] = 1.0;
        }
        scores
    }

    #[test]
    fn perfect_classifier_scores_one() {
        let labels = vec![0, 1, 2, 3, 4, 0, 1, 2, 3, 4];
        let scores = one_hot_scores(&labels, 5);
        let r = compute_metrics(&labels, &scores, &labels).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_precision, 1.0);
        assert_eq!(r.macro_recall, 1.0);
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.macro_auroc, 1.0);
        assert_eq!(r.macro_auprc, 1.0);
    }

    #[test]
    fn binary_perfect_ranking_has_unit_auroc() {
        let labels = vec![1usize, 1, 0, 0];
        let scores_pos = [0.9, 0.8, 0.3, 0.2];
        let mut scores = Array2::zeros((4, 2));
        for (i, &s) in scores_pos.iter().enumerate() {
            scores[[i, 1]] = s;
            scores[[i, 0]] = 1.0 - s;
        }
        let predictions: Vec<usize> = scores_pos.iter().map(|&s| (s >= 0.5) as usize).collect();
        let r = compute_metrics(&predictions, &scores, &labels).unwrap();
        assert_eq!(r.per_class[1].auroc, 1.0);
        assert_eq!(r.per_class[1].auprc, 1.0);
    }

    #[test]
    fn accuracy_equals_confusion_trace_ratio() {
        let labels = vec![0, 0, 1, 1, 2];
        let predictions = vec![0, 1, 1, 1, 0];
        let scores = one_hot_scores(&predictions, 3);
        let r = compute_metrics(&predictions, &scores, &labels).unwrap();
        let trace: u64 = (0..3).map(|c| r.confusion[c][c]).sum();
        assert_eq!(r.accuracy, trace as f64 / 5.0);
        // row sums equal per-class counts
        for class in 0..3 {
            let row_sum: u64 = r.confusion[class].iter().sum();
            assert_eq!(row_sum as usize, labels.iter().filter(|&&l| l == class).count());
        }
    }

    #[test]
    fn absent_class_is_excluded_with_warning() {
        let labels = vec![0usize, 0, 1];
        let predictions = vec![0usize, 2, 1];
        let scores = one_hot_scores(&predictions, 3);
        let r = compute_metrics(&predictions, &scores, &labels).unwrap();
        assert_eq!(r.absent_classes, vec![2]);
        assert_eq!(r.per_class.len(), 2);
    }

    #[test]
    fn rejects_malformed_inputs() {
        let scores = one_hot_scores(&[0, 1], 2);
        assert!(compute_metrics(&[0], &scores, &[0, 1]).is_err());
        assert!(compute_metrics(&[0, 2], &scores, &[0, 1]).is_err());
        let bad = Array2::from_elem((2, 2), 0.9);
        assert!(compute_metrics(&[0, 1], &bad, &[0, 1]).is_err());
        let empty: Array2<f64> = Array2::zeros((0, 2));
        assert!(compute_metrics(&[], &empty, &[]).is_err());
    }

    // -- brute-force oracles ------------------------------------------------

    pub(crate) fn auroc_brute(scores: &[f64], positive: &[bool]) -> Option<f64> {
        let pos: Vec<f64> = scores
            .iter()
            .zip(positive)
            .filter(|(_, &p)| p)
            .map(|(&s, _)| s)
            .collect();
        let neg: Vec<f64> = scores
            .iter()
            .zip(positive)
            .filter(|(_, &p)| !p)
            .map(|(&s, _)| s)
            .collect();
        if pos.is_empty() || neg.is_empty() {
            return None;
        }
        let mut wins = 0.0;
        for &p in &pos {
            for &q in &neg {
                if p > q {
                    wins += 1.0;
                } else if p == q {
                    wins += 0.5;
                }
            }
        }
        Some(wins / (pos.len() * neg.len()) as f64)
    }

    pub(crate) fn auprc_brute(scores: &[f64], positive: &[bool]) -> Option<f64> {
        let n_pos = positive.iter().filter(|&&p| p).count();
        if n_pos == 0 {
            return None;
        }
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let mut prev_recall = 0.0;
        let mut ap = 0.0;
        for &t in &thresholds {
            let mut tp = 0usize;
            let mut fp = 0usize;
            for (&s, &p) in scores.iter().zip(positive) {
                if s >= t {
                    if p {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            let precision = tp as f64 / (tp + fp) as f64;
            let recall = tp as f64 / n_pos as f64;
            ap += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        Some(ap)
    }

    #[test]
    fn metrics_match_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for round in 0..100 {
            let n = rng.random_range(5..=200);
            let k = 5;
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            // random scores normalized per row; quantized to force ties
            let mut scores = Array2::zeros((n, k));
            for i in 0..n {
                let mut row: Vec<f64> = (0..k)
                    .map(|_| (rng.random_range(0..20) as f64) + 0.01)
                    .collect();
                let sum: f64 = row.iter().sum();
                for v in &mut row {
                    *v /= sum;
                }
                for (j, &v) in row.iter().enumerate() {
                    scores[[i, j]] = v;
                }
            }
            let predictions: Vec<usize> = (0..n)
                .map(|i| {
                    let row = scores.row(i);
                    let mut best = 0;
                    for (j, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = j;
                        }
                    }
                    best
                })
                .collect();
            let r = compute_metrics(&predictions, &scores, &labels).unwrap();

            for cm in &r.per_class {
                let class = cm.class;
                let class_scores: Vec<f64> = scores.column(class).to_vec();
                let positive: Vec<bool> = labels.iter().map(|&l| l == class).collect();
                if let Some(expected) = auroc_brute(&class_scores, &positive) {
                    assert_abs_diff_eq!(cm.auroc, expected, epsilon = 1e-9);
                }
                let expected_ap = auprc_brute(&class_scores, &positive).unwrap();
                assert_abs_diff_eq!(cm.auprc, expected_ap, epsilon = 1e-9);

                // precision/recall/F1 by direct definition
                let tp = labels
                    .iter()
                    .zip(&predictions)
                    .filter(|(&l, &p)| l == class && p == class)
                    .count() as f64;
                let pred_count =
                    predictions.iter().filter(|&&p| p == class).count() as f64;
                let support = positive.iter().filter(|&&p| p).count() as f64;
                let precision = if pred_count > 0.0 { tp / pred_count } else { 0.0 };
                let recall = tp / support;
                assert_abs_diff_eq!(cm.precision, precision, epsilon = 1e-12);
                assert_abs_diff_eq!(cm.recall, recall, epsilon = 1e-12);
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                assert_abs_diff_eq!(cm.f1, f1, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn metrics_are_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 60;
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
        let mut scores = Array2::zeros((n, 5));
        for i in 0..n {
            let mut row: Vec<f64> = (0..5).map(|_| rng.random::<f64>() + 0.01).collect();
            let sum: f64 = row.iter().sum();
            for (j, v) in row.iter().enumerate() {
                scores[[i, j]] = v / sum;
            }
        }
        let predictions: Vec<usize> = labels.iter().map(|&l| (l + 1) % 5).collect();
        let base = compute_metrics(&predictions, &scores, &labels).unwrap();

        let mut perm: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        let labels_p: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let predictions_p: Vec<usize> = perm.iter().map(|&i| predictions[i]).collect();
        let scores_p = scores.select(ndarray::Axis(0), &perm);
        let shuffled = compute_metrics(&predictions_p, &scores_p, &labels_p).unwrap();
        assert_eq!(base.accuracy, shuffled.accuracy);
        assert_abs_diff_eq!(base.macro_auroc, shuffled.macro_auroc, epsilon = 1e-12);
        assert_abs_diff_eq!(base.macro_auprc, shuffled.macro_auprc, epsilon = 1e-12);
        assert_eq!(base.confusion, shuffled.confusion);
    }

    #[test]
    fn auroc_is_rank_invariant_under_monotone_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let scores: Vec<f64> = (0..80).map(|_| rng.random::<f64>()).collect();
        let positive: Vec<bool> = (0..80).map(|_| rng.random::<f64>() < 0.4).collect();
        let base = auroc_rank(&scores, &positive).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|&s| (3.0 * s).exp() + 1.0).collect();
        let after = auroc_rank(&transformed, &positive).unwrap();
        assert_abs_diff_eq!(base, after, epsilon = 1e-12);
    }
}
