//! Online spectral normalization of dense layers.
//!
//! Each layer keeps running estimates of its leading singular vectors. One
//! power-iteration step per call refines them, and the weight is rescaled to
//! `W · min(1, c / σ̂)` with `σ̂ = uᵀ W v`.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{MlpSpec, ParamVector};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, Matrix};

/// Singular-vector estimates for one `d_out × d_in` layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralLayer {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// Target bound on the layer's spectral norm.
    pub coeff: f64,
}

impl SpectralLayer {
    pub fn new(u: Vec<f64>, v: Vec<f64>, coeff: f64) -> Self {
        Self { u, v, coeff }
    }

    pub fn random<R: Rng + ?Sized>(d_out: usize, d_in: usize, coeff: f64, rng: &mut R) -> Self {
        Self {
            u: random_unit(d_out, rng),
            v: random_unit(d_in, rng),
            coeff,
        }
    }
}

fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm2(&v);
        if n > 1e-8 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// One power-iteration step followed by rescaling.
///
/// Returns the (possibly) rescaled weight, the refreshed state and the
/// estimate `σ̂`. A zero matrix, or one whose image of the current estimate
/// vanishes, is returned unchanged with the state untouched and `σ̂ = 0`.
pub fn spectral_normalize(
    weight: &Matrix,
    state: &SpectralLayer,
) -> Result<(Matrix, SpectralLayer, f64)> {
    if state.u.len() != weight.rows() {
        return Err(Error::DimensionMismatch {
            context: "spectral state u".into(),
            expected: weight.rows(),
            found: state.u.len(),
        });
    }
    if state.v.len() != weight.cols() {
        return Err(Error::DimensionMismatch {
            context: "spectral state v".into(),
            expected: weight.cols(),
            found: state.v.len(),
        });
    }
    if !(state.coeff > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "spectral coefficient must be positive, got {}",
            state.coeff
        )));
    }

    let mut v = weight.tr_mul_vec(&state.u);
    let nv = norm2(&v);
    if nv == 0.0 {
        return Ok((weight.clone(), state.clone(), 0.0));
    }
    v.iter_mut().for_each(|x| *x /= nv);
    let mut u = weight.mul_vec(&v);
    let nu = norm2(&u);
    if nu == 0.0 {
        return Ok((weight.clone(), state.clone(), 0.0));
    }
    u.iter_mut().for_each(|x| *x /= nu);

    let sigma = dot(&u, &weight.mul_vec(&v));
    let mut out = weight.clone();
    if sigma > state.coeff {
        out.scale(state.coeff / sigma);
    }
    Ok((
        out,
        SpectralLayer {
            u,
            v,
            coeff: state.coeff,
        },
        sigma,
    ))
}

/// Spectral-normalization state for every dense layer of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralState {
    pub layers: Vec<SpectralLayer>,
}

impl SpectralState {
    pub fn new<R: Rng + ?Sized>(spec: &MlpSpec, coeff: f64, rng: &mut R) -> Self {
        Self {
            layers: spec
                .layers()
                .iter()
                .map(|s| SpectralLayer::random(s.d_out, s.d_in, coeff, rng))
                .collect(),
        }
    }

    /// Normalizes every weight matrix of `params` in place.
    pub fn apply(&mut self, params: &mut ParamVector, spec: &MlpSpec) -> Result<()> {
        params.check_len(spec)?;
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let w = params.layer_weights(spec, l);
            let (w, next, _) = spectral_normalize(&w, layer)?;
            params.set_layer_weights(spec, l, &w);
            *layer = next;
        }
        Ok(())
    }
}
