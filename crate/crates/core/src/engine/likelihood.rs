use crate::data::Targets;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::uncertainty::{log_softmax, softmax};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Likelihood {
    Categorical,
    /// Gaussian with fixed noise standard deviation around a scalar mean.
    Gaussian { noise_std: f64 },
}

impl Likelihood {
    pub fn validate(&self) -> Result<()> {
        if let Likelihood::Gaussian { noise_std } = self {
            if !(*noise_std > 0.0) || !noise_std.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "gaussian noise std must be positive, got {noise_std}"
                )));
            }
        }
        Ok(())
    }

    fn check(&self, outputs: &Matrix, targets: &Targets) -> Result<()> {
        if outputs.rows() != targets.len() {
            return Err(Error::DimensionMismatch {
                context: "targets vs outputs".into(),
                expected: outputs.rows(),
                found: targets.len(),
            });
        }
        match (self, targets) {
            (Likelihood::Categorical, Targets::Classes { labels, .. }) => {
                let k = outputs.cols();
                if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &y)| y >= k) {
                    return Err(Error::LabelOutOfRange {
                        index,
                        label,
                        classes: k,
                    });
                }
                Ok(())
            }
            (Likelihood::Gaussian { .. }, Targets::Real(_)) => {
                if outputs.cols() != 1 {
                    return Err(Error::DimensionMismatch {
                        context: "gaussian likelihood output width".into(),
                        expected: 1,
                        found: outputs.cols(),
                    });
                }
                Ok(())
            }
            (Likelihood::Categorical, Targets::Real(_)) => Err(Error::InvalidTargets(
                "categorical likelihood needs class labels".into(),
            )),
            (Likelihood::Gaussian { .. }, Targets::Classes { .. }) => Err(Error::InvalidTargets(
                "gaussian likelihood needs real-valued targets".into(),
            )),
        }
    }
}

/// Summed log-likelihood of a batch, in nats.
pub fn log_likelihood(outputs: &Matrix, targets: &Targets, likelihood: &Likelihood) -> Result<f64> {
    Ok(log_likelihood_and_grad(outputs, targets, likelihood)?.0)
}

/// Summed log-likelihood and its gradient with respect to the outputs.
pub fn log_likelihood_and_grad(
    outputs: &Matrix,
    targets: &Targets,
    likelihood: &Likelihood,
) -> Result<(f64, Matrix)> {
    likelihood.validate()?;
    likelihood.check(outputs, targets)?;
    let mut grad = Matrix::zeros(outputs.rows(), outputs.cols());
    let mut total = 0.0;
    match (likelihood, targets) {
        (Likelihood::Categorical, Targets::Classes { labels, .. }) => {
            for (b, (row, &y)) in outputs.iter_rows().zip(labels).enumerate() {
                total += log_softmax(row)[y];
                let p = softmax(row);
                let g = grad.row_mut(b);
                for (k, gk) in g.iter_mut().enumerate() {
                    *gk = if k == y { 1.0 - p[k] } else { -p[k] };
                }
            }
        }
        (Likelihood::Gaussian { noise_std }, Targets::Real(ys)) => {
            let var = noise_std * noise_std;
            let norm = 0.5 * (2.0 * std::f64::consts::PI * var).ln();
            for (b, (&mu, &y)) in outputs.as_slice().iter().zip(ys).enumerate() {
                let r = y - mu;
                total += -r * r / (2.0 * var) - norm;
                grad.set(b, 0, r / var);
            }
        }
        _ => unreachable!("checked above"),
    }
    Ok((total, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits() {
        let out = Matrix::from_rows(&[[0.7; 10]]);
        let t = Targets::classes(vec![3], 10).unwrap();
        let ll = log_likelihood(&out, &t, &Likelihood::Categorical).unwrap();
        assert!((ll - 0.1f64.ln()).abs() < 1e-12);
        assert!((ll + 10f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn gaussian_zero_residual() {
        let out = Matrix::from_rows(&[[1.5], [-2.0]]);
        let t = Targets::Real(vec![1.5, -2.0]);
        let ll = log_likelihood(&out, &t, &Likelihood::Gaussian { noise_std: 1.0 }).unwrap();
        let per = -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((ll - 2.0 * per).abs() < 1e-12);
        assert!((per + 0.918939).abs() < 1e-6);
    }

    #[test]
    fn categorical_matches_max_subtracted_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut rows = vec![];
        let mut labels = vec![];
        for _ in 0..16 {
            rows.push((0..5).map(|_| rng.random_range(-30.0..30.0)).collect::<Vec<f64>>());
            labels.push(rng.random_range(0..5));
        }
        let out = Matrix::from_rows(&rows);
        let t = Targets::classes(labels.clone(), 5).unwrap();
        let ll = log_likelihood(&out, &t, &Likelihood::Categorical).unwrap();
        let mut oracle = 0.0;
        for (row, &y) in rows.iter().zip(&labels) {
            let m = row.iter().cloned().fold(f64::MIN, f64::max);
            let s: f64 = row.iter().map(|z| (z - m).exp()).sum();
            oracle += row[y] - m - s.ln();
        }
        assert!((ll - oracle).abs() < 1e-12);
    }

    #[test]
    fn output_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = Matrix::from_vec(3, 4, (0..12).map(|_| rng.random_range(-2.0..2.0)).collect());
        let t = Targets::classes(vec![0, 3, 1], 4).unwrap();
        let (_, g) = log_likelihood_and_grad(&out, &t, &Likelihood::Categorical).unwrap();
        for idx in 0..12 {
            let h = 1e-6;
            let mut up = out.clone();
            up.as_mut_slice()[idx] += h;
            let mut down = out.clone();
            down.as_mut_slice()[idx] -= h;
            let fd = (log_likelihood(&up, &t, &Likelihood::Categorical).unwrap()
                - log_likelihood(&down, &t, &Likelihood::Categorical).unwrap())
                / (2.0 * h);
            assert!((fd - g.as_slice()[idx]).abs() < 1e-7);
        }
    }

    #[test]
    fn bad_targets() {
        let out = Matrix::from_rows(&[[0.0, 0.0]]);
        let t = Targets::Classes {
            labels: vec![2],
            num_classes: 3,
        };
        assert!(matches!(
            log_likelihood(&out, &t, &Likelihood::Categorical),
            Err(Error::LabelOutOfRange { .. })
        ));
        assert!(log_likelihood(&out, &Targets::Real(vec![0.0]), &Likelihood::Categorical).is_err());
        assert!(log_likelihood(
            &out,
            &Targets::Real(vec![0.0]),
            &Likelihood::Gaussian { noise_std: 1.0 }
        )
        .is_err());
    }
}
