use crate::data::Dataset;
use crate::engine::{train, Method, TrainConfig, TrainLog};
use crate::error::{Error, Result};
use crate::nn::{MlpSpec, ParamVector};
use crate::particles::{Mode, ParticleSet};
use crate::repulsion::RepulsionSource;

/// Trains a single network `base ∘ act ∘ linear(out_dim)` by MAP and returns
/// the parameters of the base part (the leading layers) with the log.
///
/// The method in `cfg` is ignored: pretraining is always plain ascent.
pub fn pretrain_base(
    dataset: &Dataset,
    base_spec: &MlpSpec,
    out_dim: usize,
    cfg: &TrainConfig,
) -> Result<(ParamVector, TrainLog)> {
    let mut widths = base_spec.widths().to_vec();
    widths.push(out_dim);
    let full = MlpSpec::new(widths, base_spec.activation())?;
    let ps = ParticleSet::init(Mode::FullEnsemble, full, None, 1, cfg.seed)?;
    let cfg = TrainConfig {
        method: Method::PlainEnsemble,
        ..cfg.clone()
    };
    let (trained, log) = train(&ps, dataset, None, &cfg)?;
    // layer parameters are laid out layer by layer, so the base is a prefix
    let base_len = base_spec.parameter_count();
    let base = ParamVector::new(trained.particles()[0].as_slice()[..base_len].to_vec());
    Ok((base, log))
}

/// Two-stage recipe: pretrain a base network, freeze it, then train `n`
/// heads on its features with `heads`.
#[derive(Debug, Clone, PartialEq)]
pub struct LastLayerRecipe {
    pub base_spec: MlpSpec,
    pub head_spec: MlpSpec,
    pub particles: usize,
    /// `None` keeps the randomly initialized base.
    pub pretrain: Option<TrainConfig>,
    pub heads: TrainConfig,
    /// Seed for base and head initialization.
    pub seed: u64,
}

impl LastLayerRecipe {
    /// The multi-head set before head training (pretrained base, random heads).
    pub fn initial_set(&self, dataset: &Dataset) -> Result<ParticleSet> {
        let mut ps = ParticleSet::init(
            Mode::MultiHead,
            self.base_spec.clone(),
            Some(self.head_spec.clone()),
            self.particles,
            self.seed,
        )?;
        if let Some(pre) = &self.pretrain {
            let (base, _) = pretrain_base(dataset, &self.base_spec, self.head_spec.output_dim(), pre)?;
            ps.set_base_params(base)?;
        }
        ps.set_base_frozen(true);
        Ok(ps)
    }
}

/// Runs the recipe end to end; `repulsion` is needed for function-space heads.
pub fn fit_last_layer(
    recipe: &LastLayerRecipe,
    dataset: &Dataset,
    repulsion: Option<&RepulsionSource>,
) -> Result<(ParticleSet, TrainLog)> {
    if recipe.heads.method.needs_repulsion_batch() && repulsion.is_none() {
        return Err(Error::InvalidConfig("function-space heads need a repulsion source".into()));
    }
    let ps = recipe.initial_set(dataset)?;
    train(&ps, dataset, repulsion, &recipe.heads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Likelihood;
    use crate::nn::{forward, Activation};
    use crate::tasks::gen_two_moons;

    #[test]
    fn pretrained_base_reproduces_the_map_network() {
        let ds = gen_two_moons(0, 64, 0.1).unwrap();
        let base = MlpSpec::new(vec![2, 8, 8], Activation::Tanh).unwrap();
        let cfg = TrainConfig {
            step_size: 1e-3,
            steps: 30,
            train_batch_size: 32,
            likelihood: Likelihood::Categorical,
            ..Default::default()
        };
        let (b, log) = pretrain_base(&ds, &base, 2, &cfg).unwrap();
        assert_eq!(b.len(), base.parameter_count());
        assert_eq!(log.records.len(), 3);
        let recipe = LastLayerRecipe {
            base_spec: base.clone(),
            head_spec: MlpSpec::new(vec![8, 2], Activation::Tanh).unwrap(),
            particles: 3,
            pretrain: Some(cfg),
            heads: TrainConfig {
                steps: 0,
                ..Default::default()
            },
            seed: 1,
        };
        let ps = recipe.initial_set(&ds).unwrap();
        assert!(ps.base_frozen());
        assert_eq!(ps.shared().unwrap().params, b);
        let f = ps.features(&ds.inputs).unwrap().unwrap();
        let mut direct = forward(&b, &base, &ds.inputs).unwrap();
        direct.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
        assert_eq!(f, direct);
        assert!(fit_last_layer(&recipe, &ds, None).is_err());
    }
}
