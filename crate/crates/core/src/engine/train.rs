use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::step::{apply_directions, compute_directions, Directions};
use super::TrainConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{pairwise_distances, Distance};
use crate::linalg::Matrix;
use crate::nn::SpectralState;
use crate::particles::{particle_rng, ParticleSet};
use crate::repulsion::RepulsionSource;

// Random streams derived from the training seed. Kept apart so that drawing
// repulsion inputs never perturbs the mini-batch schedule.
const BATCH_STREAM: u64 = 0x6261_7463;
const REPULSION_STREAM: u64 = 0x7265_706c;
const SPECTRAL_STREAM: u64 = 0x7370_6563;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainRecord {
    pub step: u64,
    pub mean_nll: f64,
    pub mean_function_distance: f64,
    pub mean_param_distance: f64,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TrainRecord> {
        self.records.last()
    }
}

/// Mean Euclidean distance over all unordered pairs of rows (0 for one row).
pub fn mean_pairwise_distance(vectors: &Matrix) -> f64 {
    let n = vectors.rows();
    if n < 2 {
        return 0.0;
    }
    let d = pairwise_distances(vectors, Distance::L2).unwrap_or_else(|_| Matrix::zeros(n, n));
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += d.get(i, j);
        }
    }
    s / (n * (n - 1) / 2) as f64
}

/// Mini-batches drawn without replacement within an epoch; a new random
/// permutation starts whenever fewer than a full batch remain.
struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
}

impl EpochSampler {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn next(&mut self, size: usize, rng: &mut ChaCha8Rng) -> &[usize] {
        if self.pos + size > self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let s = &self.order[self.pos..self.pos + size];
        self.pos += size;
        s
    }
}

struct Momentum {
    mu: f64,
    particles: Vec<Vec<f64>>,
    base: Option<Vec<f64>>,
}

impl Momentum {
    /// Folds `dirs` into the velocities and replaces them with the velocities.
    fn fold(&mut self, dirs: &mut Directions) {
        for (v, d) in self.particles.iter_mut().zip(dirs.particles.iter_mut()) {
            for (vi, di) in v.iter_mut().zip(d.iter_mut()) {
                *vi = self.mu * *vi + *di;
                *di = *vi;
            }
        }
        if let (Some(v), Some(d)) = (&mut self.base, &mut dirs.base) {
            for (vi, di) in v.iter_mut().zip(d.iter_mut()) {
                *vi = self.mu * *vi + *di;
                *di = *vi;
            }
        }
    }
}

/// Runs `cfg.steps` training steps from `initial` and returns the trained set
/// with its log. Deterministic given the configuration and inputs.
pub fn train(
    initial: &ParticleSet,
    dataset: &Dataset,
    repulsion: Option<&RepulsionSource>,
    cfg: &TrainConfig,
) -> Result<(ParticleSet, TrainLog)> {
    cfg.validate()?;
    dataset.validate()?;
    let n_data = dataset.len();
    if cfg.train_batch_size > n_data {
        return Err(Error::InvalidConfig(format!(
            "train batch size {} exceeds dataset size {n_data}",
            cfg.train_batch_size
        )));
    }
    if dataset.dim() != initial.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "dataset input width".into(),
            expected: initial.input_dim(),
            found: dataset.dim(),
        });
    }
    let source = match (cfg.method.needs_repulsion_batch(), repulsion) {
        (true, None) => {
            return Err(Error::InvalidConfig(
                "function-space repulsion needs a repulsion source".into(),
            ))
        }
        (true, Some(src)) => {
            src.validate()?;
            if src.input_dim() != initial.input_dim() {
                return Err(Error::DimensionMismatch {
                    context: "repulsion source width".into(),
                    expected: initial.input_dim(),
                    found: src.input_dim(),
                });
            }
            Some(src)
        }
        (false, _) => None,
    };

    let mut ps = initial.clone();
    let mut log = TrainLog::default();
    if cfg.steps == 0 {
        return Ok((ps, log));
    }
    let dataset_size = cfg.dataset_size.unwrap_or(n_data);

    let mut batch_rng = particle_rng(cfg.seed, BATCH_STREAM);
    let mut rep_rng = particle_rng(cfg.seed, REPULSION_STREAM);
    let mut sampler = EpochSampler::new(n_data, &mut batch_rng);

    let trainable_base = ps.shared().is_some_and(|s| !s.frozen);
    let mut spectral = cfg.spectral_coeff.map(|c| {
        let mut rng = particle_rng(cfg.seed, SPECTRAL_STREAM);
        let particles: Vec<SpectralState> = (0..ps.n())
            .map(|_| SpectralState::new(ps.particle_spec(), c, &mut rng))
            .collect();
        let base = trainable_base.then(|| SpectralState::new(ps.base_spec(), c, &mut rng));
        (particles, base)
    });
    let mut momentum = (cfg.momentum > 0.0).then(|| Momentum {
        mu: cfg.momentum,
        particles: vec![vec![0.0; ps.particle_spec().parameter_count()]; ps.n()],
        base: trainable_base.then(|| vec![0.0; ps.base_spec().parameter_count()]),
    });

    for l in 0..cfg.steps {
        let idx = sampler.next(cfg.train_batch_size, &mut batch_rng).to_vec();
        let batch = dataset.batch(&idx);
        let rep_batch = match source {
            Some(src) => Some(src.draw(&mut rep_rng, cfg.repulsion_batch_size)?),
            None => None,
        };
        let mut dirs = compute_directions(&ps, &batch, rep_batch.as_ref(), cfg, dataset_size)?;
        if let Some(m) = &mut momentum {
            m.fold(&mut dirs);
        }
        apply_directions(&mut ps, &dirs, cfg.step_size_at(l as u64));

        if let Some((states, base_state)) = &mut spectral {
            let spec = ps.particle_spec().clone();
            for (state, theta) in states.iter_mut().zip(ps.particles_mut()) {
                state.apply(theta, &spec)?;
            }
            if let Some(bs) = base_state {
                let base_spec = ps.base_spec().clone();
                if let Some(shared) = ps.shared_mut() {
                    bs.apply(&mut shared.params, &base_spec)?;
                }
            }
        }
        ps.set_step(ps.step() + 1);

        let stats = &dirs.stats;
        if !stats.mean_nll.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {l}")));
        }
        if (l + 1) % cfg.log_every == 0 || l + 1 == cfg.steps {
            let params = Matrix::from_rows(
                &ps.particles().iter().map(|p| p.as_slice()).collect::<Vec<_>>(),
            );
            log.records.push(TrainRecord {
                step: ps.step(),
                mean_nll: stats.mean_nll,
                mean_function_distance: mean_pairwise_distance(&stats.function_vectors),
                mean_param_distance: mean_pairwise_distance(&params),
                bandwidth: stats.bandwidth,
            });
        }
    }
    if ps.particles().iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("particle parameters after training".into()));
    }
    Ok((ps, log))
}
