use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn is_positive(v: f64) -> bool {
    v >= 0.5
}

/// Precision, recall and F1 of a binary prediction; entries `>= 0.5` count
/// as positive.
pub fn precision_recall_f1(pred: &[f64], truth: &[f64]) -> Result<(f64, f64, f64)> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension {
            expected: truth.len(),
            got: pred.len(),
            context: "prediction length",
        });
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (is_positive(p), is_positive(t)) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    if tp + fneg == 0 {
        return Err(Error::InvalidArgument("truth has no positive entries".into()));
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = tp as f64 / (tp + fneg) as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok((precision, recall, f1))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Sort-based; `O(n log n)`.
pub fn roc_auc(scores: &[f64], truth: &[f64]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::Dimension {
            expected: truth.len(),
            got: scores.len(),
            context: "score length",
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let pos = truth.iter().filter(|&&t| is_positive(t)).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument(format!(
            "AUC needs both classes (positives {pos}, negatives {neg})"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Wins counted in half-units so tie groups stay integral.
    let mut half_wins: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let (mut p, mut q) = (0u64, 0u64);
        for &k in &order[i..j] {
            if is_positive(truth[k]) {
                p += 1;
            } else {
                q += 1;
            }
        }
        half_wins += p * (2 * neg_below + q);
        neg_below += q;
        i = j;
    }
    Ok(half_wins as f64 / (2 * pos as u64 * neg as u64) as f64)
}

/// Mean and sample standard deviation (`n - 1` denominator; 0 for `n < 2`).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        if values.is_empty() {
            return Stat { mean: f64::NAN, std: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Stat { mean, std }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use rand::Rng;

    fn brute_auc(scores: &[f64], truth: &[f64]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &ti) in truth.iter().enumerate() {
            if ti < 0.5 {
                continue;
            }
            for (j, &tj) in truth.iter().enumerate() {
                if tj >= 0.5 {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn prf_cases() {
        let t = [1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        assert_eq!(precision_recall_f1(&t, &t).unwrap(), (1.0, 1.0, 1.0));
        let disjoint = [0.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        assert_eq!(precision_recall_f1(&disjoint, &t).unwrap(), (0.0, 0.0, 0.0));
        let p = [1.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let (pr, re, f1) = precision_recall_f1(&p, &t).unwrap();
        assert_eq!(pr, 0.5);
        assert!((re - 2.0 / 3.0).abs() < 1e-15);
        assert!((f1 - 4.0 / 7.0).abs() < 1e-15);
        assert!(precision_recall_f1(&t, &[0.0; 6]).is_err());
        assert_eq!(precision_recall_f1(&[0.0; 6], &t).unwrap(), (0.0, 0.0, 0.0));
    }

    #[test]
    fn equal_counts_give_equal_precision_recall_f1() {
        let t = [1.0, 1.0, 0.0, 0.0, 1.0];
        let p = [1.0, 0.0, 1.0, 0.0, 1.0];
        let (pr, re, f1) = precision_recall_f1(&p, &t).unwrap();
        assert_eq!(pr, re);
        assert!((pr - f1).abs() < 1e-15);
    }

    #[test]
    fn auc_cases() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.1, 0.2], &[1.0, 1.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 5], &[1.0, 0.0, 0.0, 1.0, 0.0]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.1, 0.9], &[1.0, 0.0]).unwrap(), 0.0);
        assert!(roc_auc(&[0.1, 0.2], &[1.0, 1.0]).is_err());
        assert!(roc_auc(&[0.1, 0.2], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn auc_matches_pairwise_oracle() {
        let mut rng = rng_from(42);
        for _ in 0..50 {
            let n = rng.random_range(2..=200);
            let mut truth: Vec<f64> = (0..n).map(|_| rng.random_bool(0.3) as u8 as f64).collect();
            truth[0] = 1.0;
            truth[1] = 0.0;
            // coarse grid forces ties
            let scores: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 10.0).floor() / 10.0).collect();
            assert_eq!(roc_auc(&scores, &truth).unwrap(), brute_auc(&scores, &truth));
        }
    }

    #[test]
    fn stat_basics() {
        let s = Stat::of(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 1.0).abs() < 1e-15);
        assert_eq!(Stat::of(&[4.0]).std, 0.0);
    }
}
