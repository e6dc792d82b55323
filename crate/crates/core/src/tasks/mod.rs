//! Synthetic datasets and experiment harnesses built on the engine.

mod active;
mod ood;
mod pipeline;

pub use active::{
    active_learning_run, select_top_k, AcquisitionConfig, AcquisitionScore, ActiveLearningCurve,
};
pub use ood::{ood_eval, score_values, OodEntry, OodReport, ScoreKind};
pub use pipeline::{fit_last_layer, pretrain_base, LastLayerRecipe};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Noise-free regression target of the 1-D toy: `sin 2x + 0.1 x³`.
pub fn regression_truth(x: f64) -> f64 {
    (2.0 * x).sin() + 0.1 * x * x * x
}

/// Standard deviation of the observation noise in the 1-D toy.
pub const REGRESSION_NOISE_STD: f64 = 0.1;

/// Two clusters of `n_per_cluster` inputs, uniform on `[-2, -1]` and `[1, 2]`,
/// with targets `regression_truth(x) + N(0, 0.1²)`.
pub fn gen_regression_toy(seed: u64, n_per_cluster: usize) -> Result<Dataset> {
    if n_per_cluster == 0 {
        return Err(Error::Empty("regression toy cluster"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, REGRESSION_NOISE_STD).expect("valid std");
    let mut xs = Vec::with_capacity(2 * n_per_cluster);
    let mut ys = Vec::with_capacity(2 * n_per_cluster);
    for (lo, hi) in [(-2.0, -1.0), (1.0, 2.0)] {
        for _ in 0..n_per_cluster {
            let x: f64 = rng.random_range(lo..=hi);
            xs.push(x);
            ys.push(regression_truth(x) + noise.sample(&mut rng));
        }
    }
    Dataset::new("regression-toy", Matrix::from_vec(xs.len(), 1, xs), Targets::Real(ys))
}

fn linspace_pi(count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..count)
            .map(|i| std::f64::consts::PI * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// Interleaved half circles of radius 1: the upper moon `(cos t, sin t)` with
/// label 0 and the lower moon `(1 − cos t, 0.5 − sin t)` with label 1, for `t`
/// evenly spaced on `[0, π]`, plus isotropic Gaussian noise.
pub fn gen_two_moons(seed: u64, n: usize, noise_std: f64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!("two moons needs n >= 2, got {n}")));
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::InvalidConfig(format!("noise std must be >= 0, got {noise_std}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_upper = n.div_ceil(2);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for t in linspace_pi(n_upper) {
        data.extend([t.cos(), t.sin()]);
        labels.push(0);
    }
    for t in linspace_pi(n - n_upper) {
        data.extend([1.0 - t.cos(), 0.5 - t.sin()]);
        labels.push(1);
    }
    if noise_std > 0.0 {
        let noise = Normal::new(0.0, noise_std).expect("valid std");
        for v in &mut data {
            *v += noise.sample(&mut rng);
        }
    }
    Dataset::new("two-moons", Matrix::from_vec(n, 2, data), Targets::classes(labels, 2)?)
}

/// `classes` isotropic 2-D Gaussian blobs centred evenly on a circle of
/// `radius`, with `n_per_class` samples each (class-major order).
pub fn gen_blobs(seed: u64, n_per_class: usize, classes: usize, radius: f64, std: f64) -> Result<Dataset> {
    if classes < 2 || n_per_class == 0 {
        return Err(Error::InvalidConfig(format!(
            "blobs need >= 2 classes and >= 1 sample per class, got {classes} and {n_per_class}"
        )));
    }
    let noise = Normal::new(0.0, std).map_err(|e| Error::InvalidConfig(format!("blob std: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * classes * n_per_class);
    let mut labels = Vec::with_capacity(classes * n_per_class);
    for c in 0..classes {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
        let (cx, cy) = (radius * angle.cos(), radius * angle.sin());
        for _ in 0..n_per_class {
            data.push(cx + noise.sample(&mut rng));
            data.push(cy + noise.sample(&mut rng));
            labels.push(c);
        }
    }
    let n = labels.len();
    Dataset::new("blobs", Matrix::from_vec(n, 2, data), Targets::classes(labels, classes)?)
}

/// Appends synthetic ambiguous samples to a classification dataset so that
/// they make up `ambiguous_fraction` of the result.
///
/// Each ambiguous input is `λ x_a + (1 − λ) x_b` for two base samples of
/// different classes and `λ ~ U(0.4, 0.6)`; its label is one of the two source
/// classes, chosen uniformly. Base samples come first and keep their order.
pub fn gen_ambiguous_mix<R: Rng + ?Sized>(base: &Dataset, ambiguous_fraction: f64, rng: &mut R) -> Result<Dataset> {
    if !(0.0..1.0).contains(&ambiguous_fraction) {
        return Err(Error::InvalidConfig(format!(
            "ambiguous fraction must lie in [0, 1), got {ambiguous_fraction}"
        )));
    }
    let (labels, k) = match &base.targets {
        Targets::Classes { labels, num_classes } => (labels, *num_classes),
        Targets::Real(_) => return Err(Error::InvalidTargets("ambiguous mix needs class labels".into())),
    };
    if labels.iter().all(|&y| y == labels[0]) {
        return Err(Error::InvalidTargets("ambiguous mix needs at least two classes present".into()));
    }
    let base_flags = base.ambiguous.clone().unwrap_or_else(|| vec![false; base.len()]);
    if ambiguous_fraction == 0.0 {
        return Ok(base.clone());
    }
    let n = base.len();
    let m = (n as f64 * ambiguous_fraction / (1.0 - ambiguous_fraction)).round() as usize;
    let d = base.dim();
    let mut inputs = base.inputs.as_slice().to_vec();
    let mut out_labels = labels.clone();
    let mut flags = base_flags;
    inputs.reserve(m * d);
    for _ in 0..m {
        let a = rng.random_range(0..n);
        let b = loop {
            let b = rng.random_range(0..n);
            if labels[b] != labels[a] {
                break b;
            }
        };
        let lambda: f64 = rng.random_range(0.4..0.6);
        let (xa, xb) = (base.inputs.row(a), base.inputs.row(b));
        inputs.extend(xa.iter().zip(xb).map(|(p, q)| lambda * p + (1.0 - lambda) * q));
        out_labels.push(if rng.random_bool(0.5) { labels[a] } else { labels[b] });
        flags.push(true);
    }
    let total = n + m;
    let mut ds = Dataset::new(
        format!("{}-ambiguous", base.name),
        Matrix::from_vec(total, d, inputs),
        Targets::classes(out_labels, k)?,
    )?;
    ds.ambiguous = Some(flags);
    Ok(ds)
}

/// Uniform points in the box `[-outer, outer]^dim` that fall outside
/// `[-inner, inner]^dim`, labelled 0 of `num_classes` (OOD sets carry no real
/// labels).
pub fn gen_far_box(seed: u64, n: usize, dim: usize, inner: f64, outer: f64, num_classes: usize) -> Result<Dataset> {
    if n == 0 || dim == 0 {
        return Err(Error::Empty("far box"));
    }
    if !(0.0 <= inner && inner < outer) {
        return Err(Error::InvalidConfig(format!("far box needs 0 <= inner < outer, got {inner}, {outer}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * dim);
    while data.len() < n * dim {
        let p: Vec<f64> = (0..dim).map(|_| rng.random_range(-outer..outer)).collect();
        if p.iter().any(|v| v.abs() > inner) {
            data.extend(p);
        }
    }
    Dataset::new(
        "far-box",
        Matrix::from_vec(n, dim, data),
        Targets::classes(vec![0; n], num_classes.max(1))?,
    )
}

/// A uniformly random split into `(first, rest)` with `first_len` samples.
pub fn random_split(ds: &Dataset, first_len: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if first_len > ds.len() {
        return Err(Error::PoolExhausted {
            requested: first_len,
            available: ds.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perm = index::sample(&mut rng, ds.len(), ds.len()).into_vec();
    Ok((ds.subset(&perm[..first_len]), ds.subset(&perm[first_len..])))
}
