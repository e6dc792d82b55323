//! Predictive uncertainty of a particle ensemble.
//!
//! For class probabilities `p_1 … p_n` at one input with mixture `p̄`:
//!
//! * total     = H(p̄)
//! * aleatoric = (1/n) Σ_i H(p_i)
//! * epistemic = (1/n) Σ_i KL(p_i ‖ p̄)
//!
//! and total = aleatoric + epistemic. All values are in nats.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::particles::ParticleSet;

/// Floor applied to probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Per-particle predictions at one input.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictiveSample {
    /// `n × K`, each row a probability vector.
    Classification(Matrix),
    /// One predicted mean per particle.
    Regression(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UncertaintyTriple {
    pub total: f64,
    pub aleatoric: f64,
    pub epistemic: f64,
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= s);
    out
}

/// `log softmax(logits)`, computed without forming the probabilities.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// Row-wise softmax of a `B × K` logit matrix.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for (r, row) in logits.iter_rows().enumerate() {
        out.row_mut(r).copy_from_slice(&softmax(row));
    }
    out
}

#[inline]
fn safe_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// Shannon entropy in nats; zero-probability classes contribute nothing.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * safe_ln(p))
        .sum::<f64>()
}

/// KL(p ‖ q) in nats, skipping classes where `p` is zero.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (safe_ln(pi) - safe_ln(qi)))
        .sum()
}

pub fn validate_probability_rows(probs: &Matrix) -> Result<()> {
    for (r, row) in probs.iter_rows().enumerate() {
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidProbabilities {
                row: r,
                reason: "entries must be finite and non-negative".into(),
            });
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidProbabilities {
                row: r,
                reason: format!("row sums to {s}"),
            });
        }
    }
    Ok(())
}

/// Mean of the rows of an `n × K` probability matrix.
pub fn mixture(probs: &Matrix) -> Vec<f64> {
    let n = probs.rows() as f64;
    let mut mean = vec![0.0; probs.cols()];
    for row in probs.iter_rows() {
        for (m, p) in mean.iter_mut().zip(row) {
            *m += p;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Total / aleatoric / epistemic split for `n × K` particle probabilities.
pub fn decompose(probs: &Matrix) -> Result<UncertaintyTriple> {
    if probs.rows() == 0 {
        return Err(Error::TooFewParticles { needed: 1, found: 0 });
    }
    validate_probability_rows(probs)?;
    let n = probs.rows() as f64;
    let pbar = mixture(probs);
    let total = entropy(&pbar);
    let aleatoric = probs.iter_rows().map(entropy).sum::<f64>() / n;
    let epistemic = probs.iter_rows().map(|p| kl_divergence(p, &pbar)).sum::<f64>() / n;
    Ok(UncertaintyTriple {
        total,
        aleatoric,
        epistemic,
    })
}

/// Decomposes a classification sample; regression samples are rejected.
pub fn decompose_sample(sample: &PredictiveSample) -> Result<UncertaintyTriple> {
    match sample {
        PredictiveSample::Classification(p) => decompose(p),
        PredictiveSample::Regression(_) => Err(Error::InvalidTargets(
            "entropy decomposition needs class probabilities".into(),
        )),
    }
}

/// Mean and population standard deviation of the particle means.
pub fn regression_disagreement(means: &[f64]) -> Result<(f64, f64)> {
    if means.is_empty() {
        return Err(Error::TooFewParticles { needed: 1, found: 0 });
    }
    let n = means.len() as f64;
    let mean = means.iter().sum::<f64>() / n;
    let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Class probabilities of every particle, `out[i]` being particle `i`'s `B × K` matrix.
pub fn particle_probabilities(ps: &ParticleSet, inputs: &Matrix) -> Result<Vec<Matrix>> {
    Ok(ps.predict_all(inputs)?.iter().map(softmax_rows).collect())
}

/// Regroups per-particle `B × K` matrices into one `n × K` matrix per input.
pub fn per_input(per_particle: &[Matrix]) -> Vec<Matrix> {
    let Some(first) = per_particle.first() else {
        return Vec::new();
    };
    let (b, k) = first.shape();
    (0..b)
        .map(|row| {
            let mut m = Matrix::zeros(per_particle.len(), k);
            for (i, p) in per_particle.iter().enumerate() {
                m.row_mut(i).copy_from_slice(p.row(row));
            }
            m
        })
        .collect()
}

/// Mixture predictive distribution `B × K` of the ensemble.
pub fn predictive_mixture(ps: &ParticleSet, inputs: &Matrix) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = per_input(&particle_probabilities(ps, inputs)?)
        .iter()
        .map(mixture)
        .collect();
    Ok(Matrix::from_rows(&rows))
}

/// One uncertainty triple per input row.
pub fn decompose_batch(ps: &ParticleSet, inputs: &Matrix) -> Result<Vec<UncertaintyTriple>> {
    per_input(&particle_probabilities(ps, inputs)?)
        .par_iter()
        .map(decompose)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, MlpSpec};
    use crate::particles::Mode;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_probs(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Matrix {
        let mut m = Matrix::zeros(n, k);
        for r in 0..n {
            let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-4.0..4.0)).collect();
            m.row_mut(r).copy_from_slice(&softmax(&logits));
        }
        m
    }

    #[test]
    fn softmax_basics() {
        assert_eq!(softmax(&[0.3; 4]), vec![0.25; 4]);
        assert_eq!(softmax(&[1000.0, 0.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn softmax_matches_extended_precision_oracle() {
        // Compensated (two-sum) accumulation of the normalizer as the oracle.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let logits: Vec<f64> = (0..7).map(|_| rng.random_range(-10.0..10.0)).collect();
        let max = logits.iter().cloned().fold(f64::MIN, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for &e in &exps {
            let t = s + e;
            c += if s.abs() >= e.abs() { (s - t) + e } else { (e - t) + s };
            s = t;
        }
        let norm = s + c;
        for (p, e) in softmax(&logits).iter().zip(&exps) {
            assert!((p - e / norm).abs() <= 1e-14);
        }
        let sum: f64 = softmax(&logits).iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn entropy_values() {
        assert!((entropy(&[0.1; 10]) - 10f64.ln()).abs() < 1e-12);
        assert_eq!(entropy(&[0.0, 1.0, 0.0]), 0.0);
        let direct = -(0.7f64 * 0.7f64.ln() + 0.3 * 0.3f64.ln());
        assert!((entropy(&[0.7, 0.3]) - direct).abs() < 1e-15);
        assert!((entropy(&[0.7, 0.3]) - 0.610864).abs() < 1e-6);
    }

    #[test]
    fn identical_rows_have_no_epistemic() {
        let m = Matrix::from_rows(&[[0.2, 0.5, 0.3]; 4]);
        let t = decompose(&m).unwrap();
        assert!(t.epistemic.abs() < 1e-15);
        assert!((t.total - t.aleatoric).abs() < 1e-15);
    }

    #[test]
    fn maximal_disagreement() {
        let m = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let t = decompose(&m).unwrap();
        let ln2 = 2f64.ln();
        assert!((t.total - ln2).abs() < 1e-15);
        assert_eq!(t.aleatoric, 0.0);
        assert!((t.epistemic - ln2).abs() < 1e-15);
    }

    #[test]
    fn epistemic_two_routes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_probs(&mut rng, 4, 6);
        let t = decompose(&m).unwrap();
        assert!((t.epistemic - (t.total - t.aleatoric)).abs() < 1e-12);
        // direct KL-sum oracle written out with explicit logs
        let mut pbar = [0.0; 6];
        for r in 0..4 {
            for k in 0..6 {
                pbar[k] += m.get(r, k) / 4.0;
            }
        }
        let mut kl = 0.0;
        for r in 0..4 {
            for k in 0..6 {
                let p = m.get(r, k);
                kl += p * (p.ln() - pbar[k].ln());
            }
        }
        assert!((t.epistemic - kl / 4.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_rows_rejected() {
        assert!(decompose(&Matrix::from_rows(&[[0.5, 0.6]])).is_err());
        assert!(decompose(&Matrix::from_rows(&[[1.5, -0.5]])).is_err());
        assert!(decompose(&Matrix::zeros(0, 3)).is_err());
        assert!(decompose_sample(&PredictiveSample::Regression(vec![1.0])).is_err());
    }

    #[test]
    fn regression_summaries() {
        assert_eq!(regression_disagreement(&[2.5; 4]).unwrap(), (2.5, 0.0));
        assert_eq!(regression_disagreement(&[-1.0, 1.0]).unwrap(), (0.0, 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let xs: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0;
        let (m, s) = regression_disagreement(&xs).unwrap();
        assert!((m - mean).abs() < 1e-12 && (s - var.sqrt()).abs() < 1e-12);
    }

    fn small_set(n: usize, seed: u64) -> ParticleSet {
        let spec = MlpSpec::new(vec![2, 5, 3], Activation::Tanh).unwrap();
        ParticleSet::init(Mode::FullEnsemble, spec, None, n, seed).unwrap()
    }

    #[test]
    fn single_particle_batch_has_zero_epistemic() {
        let ps = small_set(1, 2);
        let x = Matrix::from_rows(&[[0.1, 0.2], [3.0, -1.0]]);
        for t in decompose_batch(&ps, &x).unwrap() {
            assert!(t.epistemic.abs() < 1e-15);
        }
    }

    #[test]
    fn duplicated_particles_leave_triples_unchanged() {
        let ps = small_set(3, 8);
        let mut doubled: Vec<_> = ps.particles().to_vec();
        doubled.extend(ps.particles().iter().cloned());
        let ps2 = ParticleSet::from_parts(ps.base_spec().clone(), None, doubled, 0, 0).unwrap();
        let x = Matrix::from_rows(&[[0.5, -0.5], [1.0, 2.0], [-3.0, 0.0]]);
        for (a, b) in decompose_batch(&ps, &x).unwrap().iter().zip(decompose_batch(&ps2, &x).unwrap()) {
            assert!((a.total - b.total).abs() < 1e-12);
            assert!((a.aleatoric - b.aleatoric).abs() < 1e-12);
            assert!((a.epistemic - b.epistemic).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_equals_composed_single_input_ops() {
        let ps = small_set(3, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Matrix::from_vec(4, 2, (0..8).map(|_| rng.random_range(-2.0..2.0)).collect());
        let batch = decompose_batch(&ps, &x).unwrap();
        for (b, t) in batch.iter().enumerate() {
            let row = x.select_rows(&[b]);
            let probs: Vec<Vec<f64>> = ps
                .predict_all(&row)
                .unwrap()
                .iter()
                .map(|o| softmax(o.row(0)))
                .collect();
            let single = decompose(&Matrix::from_rows(&probs)).unwrap();
            assert_eq!(*t, single);
        }
    }

    proptest! {
        #[test]
        fn identity_nonnegativity_and_symmetries(
            seed in any::<u64>(), n in 1usize..=16, k in 2usize..=32, shift in 0usize..16,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_probs(&mut rng, n, k);
            let t = decompose(&m).unwrap();
            prop_assert!((t.total - t.aleatoric - t.epistemic).abs() < 1e-10);
            prop_assert!(t.epistemic >= -1e-12);
            prop_assert!(t.aleatoric >= 0.0);
            prop_assert!(t.total <= (k as f64).ln() + 1e-9);

            let order: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            let p = decompose(&m.select_rows(&order)).unwrap();
            prop_assert!((p.total - t.total).abs() < 1e-12);
            prop_assert!((p.epistemic - t.epistemic).abs() < 1e-12);

            let rep: Vec<usize> = (0..3 * n).map(|i| i % n).collect();
            let d = decompose(&m.select_rows(&rep)).unwrap();
            prop_assert!((d.total - t.total).abs() < 1e-12);
            prop_assert!((d.aleatoric - t.aleatoric).abs() < 1e-12);
            prop_assert!((d.epistemic - t.epistemic).abs() < 1e-12);
        }
    }
}
