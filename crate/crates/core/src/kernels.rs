//! Distances, kernel matrices and the repulsion direction between particles.
//!
//! Particles are the rows of an `n × m` matrix: flattened parameters, or
//! network outputs stacked over a batch of repulsion inputs. The kernel is
//! `k(a, b) = exp(-D(a, b) / ν)` where `D` is an ℓ1, ℓ2 or squared ℓ2 distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Bandwidth returned by the median heuristic when every particle coincides.
pub const COLLAPSED_BANDWIDTH: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Space {
    Parameter,
    #[default]
    Function,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Distance {
    #[serde(rename = "l1")]
    L1,
    #[serde(rename = "l2")]
    L2,
    #[default]
    #[serde(rename = "sql2")]
    SqL2,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Bandwidth {
    Fixed(f64),
    #[default]
    MedianHeuristic,
}

/// What a function-space particle vector is made of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    #[default]
    Logits,
    Probabilities,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KernelConfig {
    pub space: Space,
    pub distance: Distance,
    pub bandwidth: Bandwidth,
    pub representation: Representation,
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if let Bandwidth::Fixed(nu) = self.bandwidth {
            if !(nu > 0.0) || !nu.is_finite() {
                return Err(Error::InvalidBandwidth(nu));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub values: Matrix,
    pub bandwidth: f64,
}

fn check_finite(vectors: &Matrix) -> Result<()> {
    if !vectors.is_finite() {
        return Err(Error::NonFinite("particle vectors".into()));
    }
    Ok(())
}

fn distance(a: &[f64], b: &[f64], metric: Distance) -> f64 {
    match metric {
        Distance::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        Distance::L2 => distance(a, b, Distance::SqL2).sqrt(),
        Distance::SqL2 => a
            .iter()
            .zip(b)
            .map(|(x, y)| {
                let d = x - y;
                d * d
            })
            .sum(),
    }
}

/// Symmetric `n × n` matrix of pairwise distances between rows.
pub fn pairwise_distances(vectors: &Matrix, metric: Distance) -> Result<Matrix> {
    check_finite(vectors)?;
    let n = vectors.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let d = distance(vectors.row(i), vectors.row(j), metric);
            out.set(i, j, d);
            out.set(j, i, d);
        }
    }
    Ok(out)
}

/// Median of the off-diagonal squared distances divided by `ln n`.
///
/// Falls back to [`COLLAPSED_BANDWIDTH`] when the median is zero.
pub fn median_bandwidth(sq_distances: &Matrix) -> Result<f64> {
    let n = sq_distances.rows();
    if n < 2 {
        return Err(Error::TooFewParticles { needed: 2, found: n });
    }
    let mut off: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            off.push(sq_distances.get(i, j));
        }
    }
    off.sort_by(f64::total_cmp);
    let mid = off.len() / 2;
    let median = if off.len() % 2 == 1 {
        off[mid]
    } else {
        0.5 * (off[mid - 1] + off[mid])
    };
    if median == 0.0 {
        return Ok(COLLAPSED_BANDWIDTH);
    }
    Ok(median / (n as f64).ln())
}

/// Resolves the bandwidth for `vectors`. The median heuristic always works on
/// squared ℓ2 distances, whatever the kernel's own metric.
pub fn resolve_bandwidth(vectors: &Matrix, config: &KernelConfig) -> Result<f64> {
    config.validate()?;
    match config.bandwidth {
        Bandwidth::Fixed(nu) => Ok(nu),
        Bandwidth::MedianHeuristic => {
            median_bandwidth(&pairwise_distances(vectors, Distance::SqL2)?)
        }
    }
}

/// `K[i][j] = exp(-D[i][j] / ν)`.
pub fn kernel_from_distances(distances: &Matrix, bandwidth: f64) -> Result<KernelMatrix> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::InvalidBandwidth(bandwidth));
    }
    let mut values = distances.clone();
    values
        .as_mut_slice()
        .iter_mut()
        .for_each(|d| *d = (-*d / bandwidth).exp());
    Ok(KernelMatrix { values, bandwidth })
}

/// Kernel matrix between the rows of `vectors`.
pub fn kernel_matrix(vectors: &Matrix, config: &KernelConfig) -> Result<KernelMatrix> {
    let distances = pairwise_distances(vectors, config.distance)?;
    let bandwidth = match (config.bandwidth, config.distance) {
        (Bandwidth::MedianHeuristic, Distance::SqL2) => {
            config.validate()?;
            median_bandwidth(&distances)?
        }
        _ => resolve_bandwidth(vectors, config)?,
    };
    kernel_from_distances(&distances, bandwidth)
}

/// Repulsion directions for every particle, with the bandwidth used.
///
/// Row `i` is `Σ_j ∇_{v_i} k(v_i, v_j) / Σ_j k(v_i, v_j)`, the gradient of
/// `ln Σ_j k(v_i, v_j)` with the other particles and the bandwidth held fixed.
/// Gradients at zero distance are zero (exact for squared ℓ2, a convention for
/// the unsquared norms). A single particle has bandwidth `NaN` unless fixed.
pub fn repulsion_directions(vectors: &Matrix, config: &KernelConfig) -> Result<(Matrix, f64)> {
    config.validate()?;
    check_finite(vectors)?;
    let (n, m) = vectors.shape();
    if n == 0 {
        return Err(Error::TooFewParticles { needed: 1, found: 0 });
    }
    if n == 1 {
        let nu = match config.bandwidth {
            Bandwidth::Fixed(nu) => nu,
            Bandwidth::MedianHeuristic => f64::NAN,
        };
        return Ok((Matrix::zeros(1, m), nu));
    }
    let distances = pairwise_distances(vectors, config.distance)?;
    let nu = match (config.bandwidth, config.distance) {
        (Bandwidth::MedianHeuristic, Distance::SqL2) => median_bandwidth(&distances)?,
        _ => resolve_bandwidth(vectors, config)?,
    };
    let k = kernel_from_distances(&distances, nu)?.values;

    let mut out = Matrix::zeros(n, m);
    for i in 0..n {
        let vi = vectors.row(i);
        let denom: f64 = k.row(i).iter().sum();
        let ri = out.row_mut(i);
        for j in 0..n {
            let d = distances.get(i, j);
            if j == i || d == 0.0 {
                continue;
            }
            let kij = k.get(i, j);
            let vj = vectors.row(j);
            match config.distance {
                Distance::SqL2 => {
                    let c = -2.0 * kij / nu;
                    for ((r, a), b) in ri.iter_mut().zip(vi).zip(vj) {
                        *r += c * (a - b);
                    }
                }
                Distance::L2 => {
                    let c = -kij / (nu * d);
                    for ((r, a), b) in ri.iter_mut().zip(vi).zip(vj) {
                        *r += c * (a - b);
                    }
                }
                Distance::L1 => {
                    let c = -kij / nu;
                    for ((r, a), b) in ri.iter_mut().zip(vi).zip(vj) {
                        let diff = a - b;
                        if diff != 0.0 {
                            *r += c * diff.signum();
                        }
                    }
                }
            }
        }
        ri.iter_mut().for_each(|r| *r /= denom);
    }
    Ok((out, nu))
}

/// Repulsion direction of particle `i` alone.
pub fn repulsion_direction(i: usize, vectors: &Matrix, config: &KernelConfig) -> Result<Vec<f64>> {
    if i >= vectors.rows() {
        return Err(Error::DimensionMismatch {
            context: "particle index".into(),
            expected: vectors.rows(),
            found: i,
        });
    }
    let (dirs, _) = repulsion_directions(vectors, config)?;
    Ok(dirs.row(i).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Matrix {
        Matrix::from_vec(n, m, (0..n * m).map(|_| rng.random_range(-2.0..2.0)).collect())
    }

    fn cfg(distance: Distance, bandwidth: Bandwidth) -> KernelConfig {
        KernelConfig {
            distance,
            bandwidth,
            ..Default::default()
        }
    }

    #[test]
    fn three_four_five() {
        let v = Matrix::from_rows(&[[0.0, 0.0], [3.0, 4.0]]);
        assert_eq!(pairwise_distances(&v, Distance::L2).unwrap().get(0, 1), 5.0);
        assert_eq!(pairwise_distances(&v, Distance::SqL2).unwrap().get(1, 0), 25.0);
        assert_eq!(pairwise_distances(&v, Distance::L1).unwrap().get(0, 1), 7.0);
    }

    #[test]
    fn identical_rows_have_zero_distance() {
        let v = Matrix::from_rows(&[[1.5, -2.0, 0.25]; 4]);
        for metric in [Distance::L1, Distance::L2, Distance::SqL2] {
            let d = pairwise_distances(&v, metric).unwrap();
            assert!(d.as_slice().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn distances_match_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_matrix(&mut rng, 5, 8);
        for metric in [Distance::L1, Distance::L2, Distance::SqL2] {
            let d = pairwise_distances(&v, metric).unwrap();
            for i in 0..5 {
                for j in 0..5 {
                    let mut acc = 0.0;
                    for k in 0..8 {
                        let diff: f64 = v.get(i, k) - v.get(j, k);
                        acc += match metric {
                            Distance::L1 => diff.abs(),
                            _ => diff * diff,
                        };
                    }
                    if metric == Distance::L2 {
                        acc = acc.sqrt();
                    }
                    assert!((d.get(i, j) - acc).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn nan_inputs_rejected() {
        let v = Matrix::from_rows(&[[0.0], [f64::NAN]]);
        assert!(pairwise_distances(&v, Distance::L2).is_err());
    }

    #[test]
    fn median_two_particles() {
        let d = Matrix::from_rows(&[[0.0, 9.0], [9.0, 0.0]]);
        assert_eq!(median_bandwidth(&d).unwrap(), 9.0 / 2f64.ln());
    }

    #[test]
    fn median_collapsed_and_too_few() {
        assert_eq!(median_bandwidth(&Matrix::zeros(3, 3)).unwrap(), COLLAPSED_BANDWIDTH);
        assert!(median_bandwidth(&Matrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn median_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = random_matrix(&mut rng, 5, 3);
        let sq = pairwise_distances(&v, Distance::SqL2).unwrap();
        let mut vals = vec![];
        for i in 0..5 {
            for j in 0..i {
                vals.push(sq.get(i, j));
            }
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // 10 values: mean of the 5th and 6th
        let oracle = (vals[4] + vals[5]) / 2.0 / 5f64.ln();
        assert_eq!(median_bandwidth(&sq).unwrap(), oracle);
    }

    #[test]
    fn fixed_bandwidth_exp_minus_one() {
        let v = Matrix::from_rows(&[[0.0, 0.0], [3.0, 4.0]]);
        let k = kernel_matrix(&v, &cfg(Distance::SqL2, Bandwidth::Fixed(25.0))).unwrap();
        assert_eq!(k.values.get(0, 0), 1.0);
        assert!((k.values.get(0, 1) - (-1f64).exp()).abs() < 1e-15);
        assert!((k.values.get(0, 1) - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn median_kernel_matches_composed_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_matrix(&mut rng, 4, 6);
        for metric in [Distance::L1, Distance::L2, Distance::SqL2] {
            let k = kernel_matrix(&v, &cfg(metric, Bandwidth::MedianHeuristic)).unwrap();
            let nu = median_bandwidth(&pairwise_distances(&v, Distance::SqL2).unwrap()).unwrap();
            let d = pairwise_distances(&v, metric).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    assert!((k.values.get(i, j) - (-d.get(i, j) / nu).exp()).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn non_positive_bandwidth_rejected() {
        let v = Matrix::from_rows(&[[0.0], [1.0]]);
        assert!(kernel_matrix(&v, &cfg(Distance::SqL2, Bandwidth::Fixed(0.0))).is_err());
        assert!(kernel_from_distances(&Matrix::zeros(2, 2), -1.0).is_err());
    }

    #[test]
    fn single_particle_has_no_repulsion() {
        let v = Matrix::from_rows(&[[1.0, 2.0, 3.0]]);
        let r = repulsion_direction(0, &v, &KernelConfig::default()).unwrap();
        assert_eq!(r, vec![0.0; 3]);
    }

    #[test]
    fn identical_particles_have_no_repulsion() {
        let v = Matrix::from_rows(&[[1.0, -1.0]; 3]);
        for metric in [Distance::L1, Distance::L2, Distance::SqL2] {
            let (r, _) = repulsion_directions(&v, &cfg(metric, Bandwidth::MedianHeuristic)).unwrap();
            assert!(r.as_slice().iter().all(|&x| x == 0.0));
        }
    }

    fn log_kde(vi: &[f64], others: &Matrix, i: usize, nu: f64, metric: Distance) -> f64 {
        let mut s = 0.0;
        for j in 0..others.rows() {
            let vj = if j == i { vi } else { others.row(j) };
            s += (-distance(vi, vj, metric) / nu).exp();
        }
        s.ln()
    }

    #[test]
    fn repulsion_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for metric in [Distance::SqL2, Distance::L2, Distance::L1] {
            let v = random_matrix(&mut rng, 3, 4);
            let c = cfg(metric, Bandwidth::Fixed(2.5));
            for i in 0..3 {
                let r = repulsion_direction(i, &v, &c).unwrap();
                let h = 1e-6;
                for k in 0..4 {
                    let mut up = v.row(i).to_vec();
                    up[k] += h;
                    let mut down = v.row(i).to_vec();
                    down[k] -= h;
                    let fd = (log_kde(&up, &v, i, 2.5, metric) - log_kde(&down, &v, i, 2.5, metric)) / (2.0 * h);
                    let rel = (fd - r[k]).abs() / fd.abs().max(r[k].abs()).max(1e-8);
                    assert!(rel < 1e-4, "{metric:?} i={i} k={k}: fd {fd} vs {}", r[k]);
                }
            }
        }
    }

    #[test]
    fn pair_interaction_is_antisymmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random_matrix(&mut rng, 2, 7);
        let (r, _) = repulsion_directions(&v, &KernelConfig::default()).unwrap();
        for k in 0..7 {
            assert!((r.get(0, k) + r.get(1, k)).abs() <= 1e-12);
        }
    }
}
