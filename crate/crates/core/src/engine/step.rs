use rayon::prelude::*;

use super::likelihood::{log_likelihood_and_grad, Likelihood};
use super::{Method, TrainConfig};
use crate::data::{Batch, Targets};
use crate::error::{Error, Result};
use crate::kernels::{repulsion_directions, Representation};
use crate::linalg::Matrix;
use crate::nn::{self, ForwardTrace, MlpSpec, ParamVector};
use crate::particles::{activation_vjp, ParticleSet};
use crate::uncertainty::softmax_rows;

/// Diagnostics from one step, computed on pre-step parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    /// Mean per-sample negative log-likelihood on the train batch, averaged
    /// over particles.
    pub mean_nll: f64,
    /// Kernel bandwidth used for repulsion (`NaN` when none was computed).
    pub bandwidth: f64,
    /// Flattened particle outputs (`n × B·K`) on the repulsion batch, or on
    /// the train batch when there is none.
    pub function_vectors: Matrix,
}

/// Ascent directions for every trainable block, not yet scaled by the step size.
#[derive(Debug, Clone)]
pub struct Directions {
    pub particles: Vec<Vec<f64>>,
    /// Present only for multi-head sets with a trainable base.
    pub base: Option<Vec<f64>>,
    pub stats: StepStats,
}

/// `scale · ∇ log-lik − θ / σ_p²`, written out once so every path rounds alike.
fn combine_attraction(lik_grad: &[f64], theta: &[f64], scale: f64, prior_variance: f64) -> Vec<f64> {
    lik_grad
        .iter()
        .zip(theta)
        .map(|(g, t)| scale * g - t / prior_variance)
        .collect()
}

/// Mini-batch estimate of `∇ log p(θ | D)` under an isotropic Gaussian prior:
/// `∇_θ [ (N/B) · log p(batch | θ) − ‖θ‖² / (2σ_p²) ]`.
///
/// `inputs` are whatever the network consumes: raw inputs for a standalone
/// network, base features for a head.
pub fn attraction_gradient(
    params: &ParamVector,
    spec: &MlpSpec,
    inputs: &Matrix,
    targets: &Targets,
    likelihood: &Likelihood,
    dataset_size: usize,
    prior_variance: f64,
) -> Result<ParamVector> {
    let trace = nn::forward_trace(params, spec, inputs)?;
    let (_, cot) = log_likelihood_and_grad(trace.output(), targets, likelihood)?;
    let (g, _) = nn::backward_trace(params, spec, &trace, &cot)?;
    let scale = dataset_size as f64 / inputs.rows() as f64;
    Ok(ParamVector::new(combine_attraction(
        g.as_slice(),
        params.as_slice(),
        scale,
        prior_variance,
    )))
}

struct ParticlePass {
    lik_grad: ParamVector,
    loglik: f64,
    /// Likelihood cotangent w.r.t. the particle's inputs (trainable base only).
    input_cot: Option<Matrix>,
    train_outputs: Matrix,
    rep_trace: Option<ForwardTrace>,
}

fn flatten_outputs(outputs: &Matrix, repr: Representation) -> Vec<f64> {
    match repr {
        Representation::Logits => outputs.as_slice().to_vec(),
        Representation::Probabilities => softmax_rows(outputs).into_vec(),
    }
}

/// Pulls a cotangent on probabilities back onto logits: `p ⊙ (c − ⟨p, c⟩)`.
fn softmax_vjp(logits: &Matrix, cot: &mut Matrix) {
    let probs = softmax_rows(logits);
    for (p, c) in probs.iter_rows().zip(cot.as_mut_slice().chunks_exact_mut(logits.cols())) {
        let inner: f64 = p.iter().zip(c.iter()).map(|(a, b)| a * b).sum();
        for (ci, pi) in c.iter_mut().zip(p) {
            *ci = pi * (*ci - inner);
        }
    }
}

// Subtracting an all-zero repulsion could still flip the sign of a zero, so
// such terms are skipped to keep the plain-ascent path bit-for-bit.
fn any_nonzero(m: &Matrix) -> bool {
    m.as_slice().iter().any(|&v| v != 0.0)
}

fn stack_rows(vectors: Vec<Vec<f64>>) -> Matrix {
    Matrix::from_rows(&vectors)
}

/// Computes every particle's ascent direction from the current (pre-step)
/// parameters. `repulsion` is required for function-space repulsion.
pub fn compute_directions(
    ps: &ParticleSet,
    train: &Batch,
    repulsion: Option<&Matrix>,
    cfg: &TrainConfig,
    dataset_size: usize,
) -> Result<Directions> {
    let n = ps.n();
    let batch_len = train.inputs.rows();
    if batch_len == 0 {
        return Err(Error::Empty("train batch"));
    }
    if cfg.method.needs_repulsion_batch() && repulsion.is_none() {
        return Err(Error::InvalidConfig(
            "function-space repulsion needs a repulsion batch".into(),
        ));
    }
    if let Some(rep) = repulsion {
        if rep.rows() == 0 {
            return Err(Error::Empty("repulsion batch"));
        }
        if rep.cols() != ps.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "repulsion batch width".into(),
                expected: ps.input_dim(),
                found: rep.cols(),
            });
        }
    }
    if train.inputs.cols() != ps.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "layer 0 input width".into(),
            expected: ps.input_dim(),
            found: train.inputs.cols(),
        });
    }
    let repel = cfg.repulsion_weight != 0.0 && !matches!(cfg.method, Method::PlainEnsemble);
    let trainable_base = ps.shared().is_some_and(|s| !s.frozen);
    let spec = ps.particle_spec();
    let scale = dataset_size as f64 / batch_len as f64;
    let gamma = cfg.repulsion_weight;

    // Shared base pass on both batches.
    let train_base = ps.base_trace(&train.inputs)?;
    let rep_inputs = if cfg.method.needs_repulsion_batch() {
        repulsion
    } else {
        None
    };
    let rep_base = match rep_inputs {
        Some(r) => ps.base_trace(r)?,
        None => None,
    };
    let train_x = train_base.as_ref().map_or(&train.inputs, |(_, f)| f);
    let rep_x = match (&rep_base, rep_inputs) {
        (Some((_, f)), _) => Some(f),
        (None, r) => r,
    };

    let passes: Vec<ParticlePass> = ps
        .particles()
        .par_iter()
        .map(|theta| -> Result<ParticlePass> {
            let trace = nn::forward_trace(theta, spec, train_x)?;
            let (loglik, cot) = log_likelihood_and_grad(trace.output(), &train.targets, &cfg.likelihood)?;
            let (lik_grad, input_cot) = nn::backward_trace(theta, spec, &trace, &cot)?;
            let rep_trace = match rep_x {
                Some(x) => Some(nn::forward_trace(theta, spec, x)?),
                None => None,
            };
            Ok(ParticlePass {
                lik_grad,
                loglik,
                input_cot: trainable_base.then_some(input_cot),
                train_outputs: trace.into_output(),
                rep_trace,
            })
        })
        .collect::<Result<_>>()?;

    let mean_nll = -passes.iter().map(|p| p.loglik).sum::<f64>() / (n as f64 * batch_len as f64);
    let repr = cfg.method.kernel().map_or(Representation::Logits, |k| k.representation);
    let function_vectors = stack_rows(
        passes
            .iter()
            .map(|p| match &p.rep_trace {
                Some(t) => flatten_outputs(t.output(), repr),
                None => p.train_outputs.as_slice().to_vec(),
            })
            .collect(),
    );

    let mut directions: Vec<Vec<f64>> = passes
        .iter()
        .zip(ps.particles())
        .map(|(p, theta)| combine_attraction(p.lik_grad.as_slice(), theta.as_slice(), scale, cfg.prior_variance))
        .collect();

    let mut bandwidth = f64::NAN;
    let mut rep_feature_cots: Vec<Matrix> = Vec::new();
    match cfg.method {
        Method::PlainEnsemble => {}
        Method::ParamRepulsion(kernel) => {
            let vectors = Matrix::from_rows(
                &ps.particles().iter().map(|p| p.as_slice()).collect::<Vec<_>>(),
            );
            let (r, nu) = repulsion_directions(&vectors, &kernel)?;
            bandwidth = nu;
            if repel && any_nonzero(&r) {
                for (i, d) in directions.iter_mut().enumerate() {
                    for (di, ri) in d.iter_mut().zip(r.row(i)) {
                        *di -= gamma * ri;
                    }
                }
            }
        }
        Method::FunctionRepulsion(kernel) => {
            let (r, nu) = repulsion_directions(&function_vectors, &kernel)?;
            bandwidth = nu;
            if repel && any_nonzero(&r) {
                let pulled: Vec<(ParamVector, Matrix)> = passes
                    .par_iter()
                    .zip(ps.particles().par_iter())
                    .enumerate()
                    .map(|(i, (pass, theta))| {
                        let trace = pass.rep_trace.as_ref().expect("repulsion trace");
                        let out = trace.output();
                        let mut cot = Matrix::from_vec(out.rows(), out.cols(), r.row(i).to_vec());
                        if repr == Representation::Probabilities {
                            softmax_vjp(out, &mut cot);
                        }
                        nn::backward_trace(theta, spec, trace, &cot)
                    })
                    .collect::<Result<_>>()?;
                for (d, (g, _)) in directions.iter_mut().zip(&pulled) {
                    for (di, gi) in d.iter_mut().zip(g.as_slice()) {
                        *di -= gamma * gi;
                    }
                }
                if trainable_base {
                    rep_feature_cots = pulled.into_iter().map(|(_, c)| c).collect();
                }
            }
        }
    }

    let base = match (trainable_base, ps.shared()) {
        (true, Some(shared)) => {
            let base_spec = ps.base_spec();
            let inv_n = 1.0 / n as f64;
            let (train_trace, _) = train_base.as_ref().expect("base trace");
            let mut cot = Matrix::zeros(batch_len, base_spec.output_dim());
            for p in &passes {
                let c = p.input_cot.as_ref().expect("input cotangent");
                for (a, b) in cot.as_mut_slice().iter_mut().zip(c.as_slice()) {
                    *a += b;
                }
            }
            cot.scale(scale * inv_n);
            activation_vjp(base_spec.activation(), train_trace.output(), &mut cot);
            let (g_train, _) = nn::backward_trace(&shared.params, base_spec, train_trace, &cot)?;
            let mut dir = combine_attraction(g_train.as_slice(), shared.params.as_slice(), 1.0, cfg.prior_variance);
            if let (Some((rep_trace, _)), false) = (&rep_base, rep_feature_cots.is_empty()) {
                let mut rcot = Matrix::zeros(rep_trace.output().rows(), base_spec.output_dim());
                for c in &rep_feature_cots {
                    for (a, b) in rcot.as_mut_slice().iter_mut().zip(c.as_slice()) {
                        *a += b;
                    }
                }
                // zero repulsion (one particle, collapsed set) leaves the base alone
                if rcot.as_slice().iter().any(|&c| c != 0.0) {
                    rcot.scale(-gamma * inv_n);
                    activation_vjp(base_spec.activation(), rep_trace.output(), &mut rcot);
                    let (g_rep, _) = nn::backward_trace(&shared.params, base_spec, rep_trace, &rcot)?;
                    for (d, g) in dir.iter_mut().zip(g_rep.as_slice()) {
                        *d += g;
                    }
                }
            }
            Some(dir)
        }
        _ => None,
    };

    Ok(Directions {
        particles: directions,
        base,
        stats: StepStats {
            mean_nll,
            bandwidth,
            function_vectors,
        },
    })
}

/// `θ ← θ + lr · direction` for every trainable block.
pub fn apply_directions(ps: &mut ParticleSet, dirs: &Directions, lr: f64) {
    for (theta, d) in ps.particles_mut().iter_mut().zip(&dirs.particles) {
        for (t, di) in theta.as_mut_slice().iter_mut().zip(d) {
            *t += lr * di;
        }
    }
    if let (Some(d), Some(shared)) = (&dirs.base, ps.shared_mut()) {
        for (t, di) in shared.params.as_mut_slice().iter_mut().zip(d) {
            *t += lr * di;
        }
    }
}

fn run_step(
    ps: &mut ParticleSet,
    batch: &Batch,
    repulsion: Option<&Matrix>,
    cfg: &TrainConfig,
) -> Result<StepStats> {
    cfg.validate()?;
    let n_data = cfg.dataset_size.unwrap_or(batch.inputs.rows());
    let dirs = compute_directions(ps, batch, repulsion, cfg, n_data)?;
    apply_directions(ps, &dirs, cfg.step_size);
    ps.set_step(ps.step() + 1);
    Ok(dirs.stats)
}

/// One parameter-space repulsive step (or plain step) at `cfg.step_size`.
pub fn povi_step_param(ps: &mut ParticleSet, batch: &Batch, cfg: &TrainConfig) -> Result<StepStats> {
    if matches!(cfg.method, Method::FunctionRepulsion(_)) {
        return Err(Error::InvalidConfig(
            "povi_step_param needs a parameter-space or plain method".into(),
        ));
    }
    run_step(ps, batch, None, cfg)
}

/// One function-space repulsive step at `cfg.step_size`.
pub fn povi_step_function(
    ps: &mut ParticleSet,
    batch: &Batch,
    repulsion: &Matrix,
    cfg: &TrainConfig,
) -> Result<StepStats> {
    if !matches!(cfg.method, Method::FunctionRepulsion(_)) {
        return Err(Error::InvalidConfig(
            "povi_step_function needs a function-space method".into(),
        ));
    }
    run_step(ps, batch, Some(repulsion), cfg)
}

/// One step of independent gradient ascent for every particle.
pub fn plain_step(ps: &mut ParticleSet, batch: &Batch, cfg: &TrainConfig) -> Result<StepStats> {
    let cfg = TrainConfig {
        method: Method::PlainEnsemble,
        ..cfg.clone()
    };
    run_step(ps, batch, None, &cfg)
}
