//! Particle training: attraction toward the posterior plus kernel repulsion
//! in parameter or function space.
//!
//! Every step moves particle `i` along
//!
//! ```text
//! ∇ log p(θ_i | D)  −  γ · Σ_j ∇_{θ_i} k(·_i, ·_j) / Σ_j k(·_i, ·_j)
//! ```
//!
//! where the kernel compares flattened parameters or the particles' outputs
//! on a batch of repulsion inputs. With `γ = 0`, or with a single particle,
//! this is ordinary gradient ascent on the log posterior.

mod likelihood;
mod step;
mod train;

pub use likelihood::{log_likelihood, log_likelihood_and_grad, Likelihood};
pub use step::{
    apply_directions, attraction_gradient, compute_directions, plain_step, povi_step_function,
    povi_step_param, Directions, StepStats,
};
pub use train::{train, TrainLog, TrainRecord};

use crate::error::{Error, Result};
use crate::kernels::{KernelConfig, Representation};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Independent gradient ascent, no interaction between particles.
    PlainEnsemble,
    /// Repulsion between flattened trainable parameter vectors.
    ParamRepulsion(KernelConfig),
    /// Repulsion between particle outputs on repulsion inputs.
    FunctionRepulsion(KernelConfig),
}

impl Method {
    pub fn kernel(&self) -> Option<&KernelConfig> {
        match self {
            Method::PlainEnsemble => None,
            Method::ParamRepulsion(k) | Method::FunctionRepulsion(k) => Some(k),
        }
    }

    pub fn needs_repulsion_batch(&self) -> bool {
        matches!(self, Method::FunctionRepulsion(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub step_size: f64,
    pub steps: usize,
    pub train_batch_size: usize,
    pub repulsion_batch_size: usize,
    /// γ, the weight of the repulsion term.
    pub repulsion_weight: f64,
    /// σ_p² of the isotropic Gaussian prior on trainable parameters.
    pub prior_variance: f64,
    pub method: Method,
    pub likelihood: Likelihood,
    /// N in the `N / B` likelihood rescaling; defaults to the dataset size.
    pub dataset_size: Option<usize>,
    pub seed: u64,
    /// `(step, multiplier)` milestones: from `step` on, the step size is
    /// `step_size · multiplier` (the latest milestone reached wins).
    pub decay: Vec<(u64, f64)>,
    /// Heavy-ball momentum; 0 gives plain gradient ascent.
    pub momentum: f64,
    /// Spectral-normalization coefficient for trainable dense layers.
    pub spectral_coeff: Option<f64>,
    /// Record a log entry every this many steps (and after the last step).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-3,
            steps: 1000,
            train_batch_size: 128,
            repulsion_batch_size: 128,
            repulsion_weight: 1.0,
            prior_variance: 100.0,
            method: Method::FunctionRepulsion(KernelConfig::default()),
            likelihood: Likelihood::Categorical,
            dataset_size: None,
            seed: 0,
            decay: Vec::new(),
            momentum: 0.0,
            spectral_coeff: None,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return bad(format!("step size must be positive, got {}", self.step_size));
        }
        if self.train_batch_size == 0 || self.repulsion_batch_size == 0 {
            return bad("batch sizes must be at least 1".into());
        }
        if !(self.repulsion_weight >= 0.0) {
            return bad(format!("repulsion weight must be >= 0, got {}", self.repulsion_weight));
        }
        if !(self.prior_variance > 0.0) {
            return bad(format!("prior variance must be positive, got {}", self.prior_variance));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if let Some(c) = self.spectral_coeff {
            if !(c > 0.0) {
                return bad(format!("spectral coefficient must be positive, got {c}"));
            }
        }
        if self.decay.iter().any(|(_, m)| !(*m > 0.0)) {
            return bad("step-size multipliers must be positive".into());
        }
        if self.log_every == 0 {
            return bad("log_every must be at least 1".into());
        }
        if let Some(k) = self.method.kernel() {
            k.validate()?;
            if k.representation == Representation::Probabilities
                && matches!(self.likelihood, Likelihood::Gaussian { .. })
            {
                return bad("probability representation needs a categorical likelihood".into());
            }
        }
        self.likelihood.validate()
    }

    /// Step size in effect at `step` (0-based).
    pub fn step_size_at(&self, step: u64) -> f64 {
        let mult = self
            .decay
            .iter()
            .filter(|(at, _)| *at <= step)
            .max_by_key(|(at, _)| *at)
            .map_or(1.0, |(_, m)| *m);
        self.step_size * mult
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_schedule() {
        let cfg = TrainConfig {
            step_size: 0.1,
            decay: vec![(100, 0.1), (50, 0.5)],
            ..Default::default()
        };
        assert_eq!(cfg.step_size_at(0), 0.1);
        assert_eq!(cfg.step_size_at(50), 0.05);
        assert_eq!(cfg.step_size_at(150), 0.1 * 0.1);
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            train_batch_size: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            likelihood: Likelihood::Gaussian { noise_std: 0.1 },
            method: Method::FunctionRepulsion(KernelConfig {
                representation: Representation::Probabilities,
                ..Default::default()
            }),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
