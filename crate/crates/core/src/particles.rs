//! Particle sets: either `n` independent networks or one shared base network
//! with `n` heads.
//!
//! In the multi-head layout the base network's output passes through the
//! hidden activation before reaching the heads, so a base of widths
//! `[d_in, 128, 128, 128]` contributes three hidden layers and exposes
//! 128-dimensional features. A head's input width must equal the base output
//! width.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{self, Activation, ForwardTrace, MlpSpec, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    FullEnsemble,
    MultiHead,
}

impl Mode {
    pub fn tag(self) -> u8 {
        match self {
            Mode::FullEnsemble => 0,
            Mode::MultiHead => 1,
        }
    }
}

/// Shared base network of a multi-head set.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedBase {
    pub params: ParamVector,
    pub head_spec: MlpSpec,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    base_spec: MlpSpec,
    shared: Option<SharedBase>,
    particles: Vec<ParamVector>,
    seed: u64,
    step: u64,
}

/// Uniform fan-in initialization: weights in `[-1/√fan_in, 1/√fan_in]`, biases 0.
pub fn init_params<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> ParamVector {
    let mut p = vec![0.0; spec.parameter_count()];
    for layer in spec.layers() {
        let bound = 1.0 / (layer.d_in as f64).sqrt();
        for w in &mut p[layer.weight_range()] {
            *w = rng.random_range(-bound..=bound);
        }
    }
    ParamVector::new(p)
}

/// Independent random stream for particle `index` (the base uses stream 0).
pub(crate) fn particle_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl ParticleSet {
    /// Randomly initialized particle set, deterministic in `seed`.
    ///
    /// Multi-head sets start with a frozen base; see [`ParticleSet::set_base_frozen`].
    pub fn init(
        mode: Mode,
        base_spec: MlpSpec,
        head_spec: Option<MlpSpec>,
        n: usize,
        seed: u64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::TooFewParticles { needed: 1, found: 0 });
        }
        let shared = match (mode, head_spec) {
            (Mode::FullEnsemble, None) => None,
            (Mode::FullEnsemble, Some(_)) => {
                return Err(Error::InvalidSpec(
                    "a full ensemble takes no head spec".into(),
                ))
            }
            (Mode::MultiHead, None) => {
                return Err(Error::InvalidSpec("multi-head mode requires a head spec".into()))
            }
            (Mode::MultiHead, Some(head_spec)) => {
                check_head_width(&base_spec, &head_spec)?;
                let mut rng = particle_rng(seed, 0);
                Some(SharedBase {
                    params: init_params(&base_spec, &mut rng),
                    head_spec,
                    frozen: true,
                })
            }
        };
        let particle_spec = shared.as_ref().map_or(&base_spec, |s| &s.head_spec);
        let particles = (0..n)
            .map(|i| init_params(particle_spec, &mut particle_rng(seed, i as u64 + 1)))
            .collect();
        Ok(Self {
            base_spec,
            shared,
            particles,
            seed,
            step: 0,
        })
    }

    /// Assembles a set from explicit parts, validating every length.
    pub fn from_parts(
        base_spec: MlpSpec,
        shared: Option<SharedBase>,
        particles: Vec<ParamVector>,
        seed: u64,
        step: u64,
    ) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::TooFewParticles { needed: 1, found: 0 });
        }
        if let Some(s) = &shared {
            check_head_width(&base_spec, &s.head_spec)?;
            s.params.check_len(&base_spec)?;
        }
        let ps = Self {
            base_spec,
            shared,
            particles,
            seed,
            step,
        };
        for p in &ps.particles {
            p.check_len(ps.particle_spec())?;
        }
        Ok(ps)
    }

    /// A set of `n` identical copies of `map_params`, keeping this set's
    /// layout (and base, for multi-head sets).
    pub fn clone_from_map(&self, map_params: &ParamVector, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::TooFewParticles { needed: 1, found: 0 });
        }
        map_params.check_len(self.particle_spec())?;
        Ok(Self {
            base_spec: self.base_spec.clone(),
            shared: self.shared.clone(),
            particles: vec![map_params.clone(); n],
            seed: self.seed,
            step: 0,
        })
    }

    pub fn mode(&self) -> Mode {
        if self.shared.is_some() {
            Mode::MultiHead
        } else {
            Mode::FullEnsemble
        }
    }

    pub fn n(&self) -> usize {
        self.particles.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn base_spec(&self) -> &MlpSpec {
        &self.base_spec
    }

    pub fn shared(&self) -> Option<&SharedBase> {
        self.shared.as_ref()
    }

    pub fn shared_mut(&mut self) -> Option<&mut SharedBase> {
        self.shared.as_mut()
    }

    pub fn head_spec(&self) -> Option<&MlpSpec> {
        self.shared.as_ref().map(|s| &s.head_spec)
    }

    /// Spec of each entry of [`ParticleSet::particles`].
    pub fn particle_spec(&self) -> &MlpSpec {
        self.shared.as_ref().map_or(&self.base_spec, |s| &s.head_spec)
    }

    pub fn particles(&self) -> &[ParamVector] {
        &self.particles
    }

    pub fn particles_mut(&mut self) -> &mut [ParamVector] {
        &mut self.particles
    }

    pub fn input_dim(&self) -> usize {
        self.base_spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.particle_spec().output_dim()
    }

    pub fn base_frozen(&self) -> bool {
        self.shared.as_ref().is_some_and(|s| s.frozen)
    }

    pub fn set_base_frozen(&mut self, frozen: bool) {
        if let Some(s) = &mut self.shared {
            s.frozen = frozen;
        }
    }

    /// Replaces the shared base parameters (e.g. with a pretrained network).
    pub fn set_base_params(&mut self, params: ParamVector) -> Result<()> {
        params.check_len(&self.base_spec)?;
        match &mut self.shared {
            Some(s) => {
                s.params = params;
                Ok(())
            }
            None => Err(Error::InvalidSpec("full ensembles have no shared base".into())),
        }
    }

    /// Number of parameters updated during training.
    pub fn trainable_parameter_count(&self) -> usize {
        let per_particle = self.particle_spec().parameter_count() * self.n();
        match &self.shared {
            Some(s) if !s.frozen => per_particle + self.base_spec.parameter_count(),
            _ => per_particle,
        }
    }

    /// Base features `act(base(x))` for multi-head sets, `None` otherwise.
    pub fn features(&self, inputs: &Matrix) -> Result<Option<Matrix>> {
        match &self.shared {
            None => Ok(None),
            Some(s) => {
                let mut f = nn::forward(&s.params, &self.base_spec, inputs)?;
                apply_activation(self.base_spec.activation(), &mut f);
                Ok(Some(f))
            }
        }
    }

    /// Base forward trace plus activated features, for back-propagating into
    /// a trainable base.
    pub(crate) fn base_trace(&self, inputs: &Matrix) -> Result<Option<(ForwardTrace, Matrix)>> {
        match &self.shared {
            None => Ok(None),
            Some(s) => {
                let trace = nn::forward_trace(&s.params, &self.base_spec, inputs)?;
                let mut f = trace.output().clone();
                apply_activation(self.base_spec.activation(), &mut f);
                Ok(Some((trace, f)))
            }
        }
    }

    /// Per-particle outputs, one `B × K` matrix per particle in particle order.
    pub fn predict_all(&self, inputs: &Matrix) -> Result<Vec<Matrix>> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "layer 0 input width".into(),
                expected: self.input_dim(),
                found: inputs.cols(),
            });
        }
        let features = self.features(inputs)?;
        let x = features.as_ref().unwrap_or(inputs);
        let spec = self.particle_spec();
        self.particles
            .par_iter()
            .map(|p| nn::forward(p, spec, x))
            .collect()
    }

    /// Equivalent full ensemble: each member is the base composed with one head.
    pub fn to_full_ensemble(&self) -> Result<ParticleSet> {
        let Some(s) = &self.shared else {
            return Ok(self.clone());
        };
        if s.head_spec.activation() != self.base_spec.activation() && s.head_spec.num_layers() > 1 {
            return Err(Error::InvalidSpec(
                "head and base activations differ; no single-spec equivalent".into(),
            ));
        }
        let mut widths = self.base_spec.widths().to_vec();
        widths.extend_from_slice(&s.head_spec.widths()[1..]);
        let spec = MlpSpec::new(widths, self.base_spec.activation())?;
        let particles = self
            .particles
            .iter()
            .map(|h| {
                let mut v = s.params.as_slice().to_vec();
                v.extend_from_slice(h.as_slice());
                ParamVector::new(v)
            })
            .collect();
        ParticleSet::from_parts(spec, None, particles, self.seed, self.step)
    }
}

pub(crate) fn apply_activation(act: Activation, m: &mut Matrix) {
    for v in m.as_mut_slice() {
        *v = match act {
            Activation::Relu => {
                if *v > 0.0 {
                    *v
                } else {
                    0.0
                }
            }
            Activation::Tanh => v.tanh(),
        };
    }
}

/// Multiplies `cot` by the activation derivative at the pre-activation `z`.
pub(crate) fn activation_vjp(act: Activation, z: &Matrix, cot: &mut Matrix) {
    for (c, &zv) in cot.as_mut_slice().iter_mut().zip(z.as_slice()) {
        *c *= match act {
            Activation::Relu => {
                if zv > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = zv.tanh();
                1.0 - t * t
            }
        };
    }
}

fn check_head_width(base: &MlpSpec, head: &MlpSpec) -> Result<()> {
    if head.input_dim() != base.output_dim() {
        return Err(Error::DimensionMismatch {
            context: "head input width vs base feature width".into(),
            expected: base.output_dim(),
            found: head.input_dim(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(w: &[usize]) -> MlpSpec {
        MlpSpec::new(w.to_vec(), Activation::Relu).unwrap()
    }

    #[test]
    fn single_particle_is_valid() {
        let ps = ParticleSet::init(Mode::FullEnsemble, spec(&[2, 3, 1]), None, 1, 42).unwrap();
        assert_eq!(ps.n(), 1);
        assert_eq!(ps.particles()[0].len(), ps.base_spec().parameter_count());
    }

    #[test]
    fn multi_head_parameter_count() {
        let ps = ParticleSet::init(Mode::MultiHead, spec(&[4, 512]), Some(spec(&[512, 10])), 10, 0).unwrap();
        assert_eq!(ps.trainable_parameter_count(), 51_300);
    }

    #[test]
    fn init_is_deterministic_and_heads_differ() {
        let a = ParticleSet::init(Mode::MultiHead, spec(&[2, 8]), Some(spec(&[8, 3])), 4, 9).unwrap();
        let b = ParticleSet::init(Mode::MultiHead, spec(&[2, 8]), Some(spec(&[8, 3])), 4, 9).unwrap();
        assert_eq!(a, b);
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(a.particles()[i], a.particles()[j]);
            }
        }
    }

    #[test]
    fn init_respects_fan_in_bounds_and_zero_biases() {
        let s = spec(&[9, 4, 2]);
        let ps = ParticleSet::init(Mode::FullEnsemble, s.clone(), None, 3, 1).unwrap();
        for p in ps.particles() {
            for layer in s.layers() {
                let bound = 1.0 / (layer.d_in as f64).sqrt();
                assert!(p.as_slice()[layer.weight_range()].iter().all(|w| w.abs() <= bound));
                assert!(p.as_slice()[layer.bias_range()].iter().all(|&b| b == 0.0));
            }
        }
    }

    #[test]
    fn inconsistent_widths_rejected() {
        let err = ParticleSet::init(Mode::MultiHead, spec(&[2, 8]), Some(spec(&[7, 3])), 2, 0);
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
        assert!(ParticleSet::init(Mode::FullEnsemble, spec(&[2, 1]), None, 0, 0).is_err());
    }

    #[test]
    fn clone_from_map_copies() {
        let ps = ParticleSet::init(Mode::MultiHead, spec(&[2, 5]), Some(spec(&[5, 2])), 2, 3).unwrap();
        let map = ps.particles()[1].clone();
        let cloned = ps.clone_from_map(&map, 3).unwrap();
        assert_eq!(cloned.n(), 3);
        assert!(cloned.particles().iter().all(|p| p == &map));
        assert!(ps.clone_from_map(&ParamVector::zeros(3), 2).is_err());
    }

    #[test]
    fn single_particle_prediction_is_plain_forward() {
        let ps = ParticleSet::init(Mode::FullEnsemble, spec(&[2, 4, 3]), None, 1, 5).unwrap();
        let x = Matrix::from_rows(&[[0.5, -1.0], [2.0, 0.1]]);
        let out = ps.predict_all(&x).unwrap();
        assert_eq!(out[0], nn::forward(&ps.particles()[0], ps.base_spec(), &x).unwrap());
    }

    #[test]
    fn multi_head_equals_composed_full_ensemble() {
        let ps = ParticleSet::init(Mode::MultiHead, spec(&[3, 6, 5]), Some(spec(&[5, 4, 2])), 3, 17).unwrap();
        let full = ps.to_full_ensemble().unwrap();
        let x = Matrix::from_rows(&[[0.1, 0.2, -0.3], [1.0, -2.0, 0.5], [0.0, 0.0, 0.0]]);
        let a = ps.predict_all(&x).unwrap();
        let b = full.predict_all(&x).unwrap();
        for (ma, mb) in a.iter().zip(&b) {
            for (u, v) in ma.as_slice().iter().zip(mb.as_slice()) {
                assert!((u - v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn prediction_rejects_wrong_width() {
        let ps = ParticleSet::init(Mode::FullEnsemble, spec(&[2, 1]), None, 2, 0).unwrap();
        assert!(ps.predict_all(&Matrix::zeros(1, 3)).is_err());
    }
}
