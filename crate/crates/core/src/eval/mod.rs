//! Cross-validation protocols, baselines, metrics, and significance testing.

mod baselines;
mod experiment;
mod metrics;

pub use baselines::{svm_c_grid, train_baseline, BaselineConfig, BaselineKind, TrainedBaseline};
pub use experiment::{
    run_ablation_pair, run_experiment, run_one_to_one, ExperimentConfig, ExperimentReport,
    FoldResult, LatentDump, ModelSpec, OneToOneConfig, OneToOneReport, OneToOneSubject,
    SubjectSummary,
};
pub use metrics::{compute_metrics, ClassMetrics, MetricsReport};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldScheme {
    /// Leave one block out, within each subject.
    Lobo,
    /// Leave one subject out.
    Loso,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Fold {
    Lobo {
        subject: u32,
        test_block: u32,
        train_blocks: Vec<u32>,
    },
    Loso {
        test_subject: u32,
        train_subjects: Vec<u32>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub scheme: FoldScheme,
    pub folds: Vec<Fold>,
}

/// Build the fold plan over (subject, block) keys. Every sample group lands
/// in a test set exactly once.
pub fn make_folds(keys: &[(u32, u32)], scheme: FoldScheme) -> Result<FoldPlan> {
    if keys.is_empty() {
        return Err(Error::Empty("no dataset keys".into()));
    }
    let mut by_subject: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for &(subject, block) in keys {
        let blocks = by_subject.entry(subject).or_default();
        if !blocks.contains(&block) {
            blocks.push(block);
        }
    }
    for blocks in by_subject.values_mut() {
        blocks.sort_unstable();
    }

    let folds = match scheme {
        FoldScheme::Lobo => {
            let mut folds = Vec::new();
            for (&subject, blocks) in &by_subject {
                if blocks.len() < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "leave-one-block-out needs at least 2 blocks, subject {subject} has {}",
                        blocks.len()
                    )));
                }
                for &test_block in blocks {
                    folds.push(Fold::Lobo {
                        subject,
                        test_block,
                        train_blocks: blocks.iter().copied().filter(|&b| b != test_block).collect(),
                    });
                }
            }
            folds
        }
        FoldScheme::Loso => {
            let subjects: Vec<u32> = by_subject.keys().copied().collect();
            if subjects.len() < 2 {
                return Err(Error::InvalidArgument(format!(
                    "leave-one-subject-out needs at least 2 subjects, got {}",
                    subjects.len()
                )));
            }
            subjects
                .iter()
                .map(|&test_subject| Fold::Loso {
                    test_subject,
                    train_subjects: subjects
                        .iter()
                        .copied()
                        .filter(|&s| s != test_subject)
                        .collect(),
                })
                .collect()
        }
    };
    Ok(FoldPlan { scheme, folds })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-tailed p-value.
    pub p: f64,
}

/// Paired two-tailed t-test over per-subject values.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "paired t-test needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument(
            "paired t-test needs at least 2 pairs".into(),
        ));
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Err(Error::Degenerate(
            "zero-variance differences in paired t-test".into(),
        ));
    }
    let t = mean / (var.sqrt() / n.sqrt());
    let df = n - 1.0;
    let p = incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
    Ok(TTest { t, df, p })
}

/// Lanczos approximation of ln Gamma(x), x > 0.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut y = x;
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut ser = 1.000000000190015;
    for c in COEFFS {
        y += 1.0;
        ser += c / y;
    }
    -tmp + (2.5066282746310005 * ser / x).ln()
}

/// Continued-fraction evaluation for the incomplete beta (modified Lentz).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 3e-16;
    const FPMIN: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub(crate) fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}
