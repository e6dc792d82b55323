//! Classification and OOD-detection metrics.
//!
//! Probabilities arrive as `N × K` matrices with one row per sample. The
//! predicted class is the argmax with the lowest index winning ties.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::uncertainty::PROB_FLOOR;

pub const DEFAULT_ECE_BINS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub nll: f64,
    pub ece: f64,
    pub brier: f64,
    pub samples: usize,
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

fn check_labels(probs: &Matrix, labels: &[usize]) -> Result<()> {
    if probs.rows() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "labels vs probability rows".into(),
            expected: probs.rows(),
            found: labels.len(),
        });
    }
    if probs.rows() == 0 {
        return Err(Error::Empty("prediction set"));
    }
    let k = probs.cols();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &y)| y >= k) {
        return Err(Error::LabelOutOfRange {
            index,
            label,
            classes: k,
        });
    }
    Ok(())
}

pub fn accuracy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(probs, labels)?;
    let correct = probs
        .iter_rows()
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Mean negative log-probability of the true label, in nats.
pub fn nll(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(probs, labels)?;
    let total: f64 = probs
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| -row[y].max(PROB_FLOOR).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Mean squared distance between the probability vector and the one-hot label.
pub fn brier(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(probs, labels)?;
    let total: f64 = probs
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| {
            row.iter()
                .enumerate()
                .map(|(k, &p)| {
                    let t = if k == y { 1.0 } else { 0.0 };
                    (p - t) * (p - t)
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// 1-based bin `m` with `(m-1)/M < c ≤ m/M`; a confidence of 0 goes to bin 1.
pub fn ece_bin(confidence: f64, bins: usize) -> usize {
    let m = bins as f64;
    let mut b = ((confidence * m).ceil() as usize).clamp(1, bins);
    while b > 1 && confidence <= (b - 1) as f64 / m {
        b -= 1;
    }
    while b < bins && confidence > b as f64 / m {
        b += 1;
    }
    b
}

/// Expected calibration error over `bins` equal-width confidence bins.
pub fn ece(probs: &Matrix, labels: &[usize], bins: usize) -> Result<f64> {
    check_labels(probs, labels)?;
    if bins == 0 {
        return Err(Error::InvalidConfig("ECE needs at least one bin".into()));
    }
    let mut count = vec![0usize; bins];
    let mut correct = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    for (row, &y) in probs.iter_rows().zip(labels) {
        let pred = argmax(row);
        let c = row[pred];
        let b = ece_bin(c, bins) - 1;
        count[b] += 1;
        conf_sum[b] += c;
        if pred == y {
            correct[b] += 1;
        }
    }
    let n = labels.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        if count[b] == 0 {
            continue;
        }
        let size = count[b] as f64;
        let acc = correct[b] as f64 / size;
        let conf = conf_sum[b] / size;
        total += (size / n) * (acc - conf).abs();
    }
    Ok(total)
}

pub fn evaluate(probs: &Matrix, labels: &[usize], bins: usize) -> Result<EvalReport> {
    Ok(EvalReport {
        accuracy: accuracy(probs, labels)?,
        nll: nll(probs, labels)?,
        ece: ece(probs, labels, bins)?,
        brier: brier(probs, labels)?,
        samples: labels.len(),
    })
}

/// Area under the ROC curve, positives expected to score higher.
///
/// Rank-sum form of the Mann-Whitney statistic with average ranks for ties,
/// so tied pairs count one half.
pub fn auroc(scores_negative: &[f64], scores_positive: &[f64]) -> Result<f64> {
    if scores_negative.is_empty() {
        return Err(Error::Empty("negative score list"));
    }
    if scores_positive.is_empty() {
        return Err(Error::Empty("positive score list"));
    }
    if scores_negative
        .iter()
        .chain(scores_positive)
        .any(|s| s.is_nan())
    {
        return Err(Error::NonFinite("AUROC scores".into()));
    }
    let mut all: Vec<(f64, bool)> = scores_negative
        .iter()
        .map(|&s| (s, false))
        .chain(scores_positive.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks are 1-based; a tie group i..=j shares the average rank
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let positives = all[i..=j].iter().filter(|(_, p)| *p).count();
        rank_sum_pos += avg_rank * positives as f64;
        i = j + 1;
    }
    let n_pos = scores_positive.len() as f64;
    let n_neg = scores_negative.len() as f64;
    let u = rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0;
    Ok(u / (n_pos * n_neg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_case(rng: &mut ChaCha8Rng, n: usize, k: usize) -> (Matrix, Vec<usize>) {
        let mut m = Matrix::zeros(n, k);
        for r in 0..n {
            let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            m.row_mut(r).copy_from_slice(&crate::uncertainty::softmax(&logits));
        }
        let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
        (m, labels)
    }

    fn pairs_oracle(neg: &[f64], pos: &[f64]) -> f64 {
        let mut s = 0.0;
        for &p in pos {
            for &q in neg {
                s += if p > q {
                    1.0
                } else if p == q {
                    0.5
                } else {
                    0.0
                };
            }
        }
        s / (pos.len() * neg.len()) as f64
    }

    #[test]
    fn nll_cases() {
        let eye = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(nll(&eye, &[0, 1]).unwrap(), 0.0);
        let uniform = Matrix::from_rows(&[[0.1; 10]; 3]);
        assert!((nll(&uniform, &[0, 4, 9]).unwrap() - 10f64.ln()).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (p, y) = random_case(&mut rng, 20, 5);
        let mut s = 0.0;
        for i in 0..20 {
            s -= p.get(i, y[i]).ln();
        }
        assert!((nll(&p, &y).unwrap() - s / 20.0).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range() {
        let p = Matrix::from_rows(&[[0.5, 0.5]]);
        assert!(matches!(nll(&p, &[2]), Err(Error::LabelOutOfRange { .. })));
        assert!(matches!(brier(&p, &[5]), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn ece_cases() {
        assert_eq!(ece(&Matrix::from_rows(&[[1.0, 0.0]]), &[0], 15).unwrap(), 0.0);
        let p = Matrix::from_rows(&[[0.8, 0.2]; 10]);
        let labels = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        assert!((ece(&p, &labels, 15).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn ece_bin_boundaries() {
        assert_eq!(ece_bin(0.0, 15), 1);
        assert_eq!(ece_bin(1.0, 15), 15);
        assert_eq!(ece_bin(0.8, 15), 12);
        assert_eq!(ece_bin(0.5, 10), 5);
        assert_eq!(ece_bin(0.5000001, 10), 6);
    }

    #[test]
    fn brier_cases() {
        let eye = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(brier(&eye, &[0, 1]).unwrap(), 0.0);
        let u = Matrix::from_rows(&[[0.5, 0.5]]);
        assert_eq!(brier(&u, &[1]).unwrap(), 0.5);
    }

    #[test]
    fn accuracy_cases() {
        let p = Matrix::from_rows(&[[0.9, 0.1], [0.2, 0.8], [0.5, 0.5]]);
        assert_eq!(accuracy(&p, &[0, 1, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&p, &[1, 0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn auroc_cases() {
        assert_eq!(auroc(&[0.1, 0.2], &[0.8, 0.9]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 5], &[0.3; 7]).unwrap(), 0.5);
        assert!(auroc(&[], &[1.0]).is_err());
        assert!(auroc(&[1.0], &[]).is_err());
    }

    #[test]
    fn auroc_matches_pairs_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let neg: Vec<f64> = (0..50).map(|_| rng.random_range(0..10) as f64).collect();
        let pos: Vec<f64> = (0..50).map(|_| rng.random_range(3..13) as f64).collect();
        assert!((auroc(&neg, &pos).unwrap() - pairs_oracle(&neg, &pos)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn auroc_complement_and_monotone_invariance(
            neg in proptest::collection::vec(0u8..20, 1..40),
            pos in proptest::collection::vec(0u8..20, 1..40),
        ) {
            let neg: Vec<f64> = neg.into_iter().map(f64::from).collect();
            let pos: Vec<f64> = pos.into_iter().map(f64::from).collect();
            let a = auroc(&neg, &pos).unwrap();
            let b = auroc(&pos, &neg).unwrap();
            prop_assert!((a + b - 1.0).abs() <= 1e-15);
            let tn: Vec<f64> = neg.iter().map(|s| (0.3 * s).exp() - 4.0).collect();
            let tp: Vec<f64> = pos.iter().map(|s| (0.3 * s).exp() - 4.0).collect();
            prop_assert_eq!(auroc(&tn, &tp).unwrap(), a);
        }

        #[test]
        fn metrics_permutation_invariant_and_nll_nonnegative(seed in any::<u64>(), shift in 1usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (p, y) = random_case(&mut rng, 30, 4);
            let order: Vec<usize> = (0..30).map(|i| (i * 7 + shift) % 30).collect();
            let q = p.select_rows(&order);
            let z: Vec<usize> = order.iter().map(|&i| y[i]).collect();
            let a = evaluate(&p, &y, 15).unwrap();
            let b = evaluate(&q, &z, 15).unwrap();
            prop_assert!(a.nll >= 0.0);
            prop_assert_eq!(a.accuracy, b.accuracy);
            prop_assert!((a.nll - b.nll).abs() < 1e-12);
            prop_assert!((a.ece - b.ece).abs() < 1e-12);
            prop_assert!((a.brier - b.brier).abs() < 1e-12);
        }
    }

    #[test]
    fn ece_zero_when_calibrated_per_bin() {
        // four samples at confidence 0.75, three correct
        let p = Matrix::from_rows(&[[0.75, 0.25]; 4]);
        assert!(ece(&p, &[0, 0, 0, 1], 15).unwrap().abs() < 1e-15);
    }
}
