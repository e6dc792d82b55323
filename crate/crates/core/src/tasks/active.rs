use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::pipeline::{fit_last_layer, LastLayerRecipe};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::accuracy;
use crate::repulsion::RepulsionSource;
use crate::uncertainty::{decompose_batch, predictive_mixture};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AcquisitionScore {
    Epistemic,
    Total,
    Aleatoric,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionConfig {
    pub initial_labeled: usize,
    pub acquire_per_round: usize,
    pub rounds: usize,
    pub score: AcquisitionScore,
    /// Model and training used from scratch in every round.
    pub recipe: LastLayerRecipe,
    pub repulsion: Option<RepulsionSource>,
    /// Draw the initial labeled set from unflagged (clean) pool samples only.
    pub initial_clean_only: bool,
    /// Expected `(clean, ambiguous)` proportions of the pool, checked when the
    /// pool carries ambiguity flags.
    pub pool_ratio: Option<(usize, usize)>,
    pub seed: u64,
}

impl AcquisitionConfig {
    pub fn validate(&self, pool: &Dataset) -> Result<()> {
        if self.initial_labeled == 0 || self.acquire_per_round == 0 {
            return Err(Error::InvalidConfig(
                "initial and per-round acquisition counts must be at least 1".into(),
            ));
        }
        let needed = self.initial_labeled + self.rounds * self.acquire_per_round;
        if needed > pool.len() {
            return Err(Error::PoolExhausted {
                requested: needed,
                available: pool.len(),
            });
        }
        if let (Some((c, a)), Some(flags)) = (self.pool_ratio, &pool.ambiguous) {
            let amb = flags.iter().filter(|&&f| f).count();
            let clean = flags.len() - amb;
            // cross-multiplied, allowing one sample of rounding either way
            let lhs = (clean * a) as i128;
            let rhs = (amb * c) as i128;
            if (lhs - rhs).abs() > (a.max(c)) as i128 {
                return Err(Error::InvalidConfig(format!(
                    "pool has {clean} clean and {amb} ambiguous samples, expected ratio {c}:{a}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActiveLearningCurve {
    pub labeled_sizes: Vec<usize>,
    pub accuracies: Vec<f64>,
    /// Pool indices acquired in each round.
    pub acquired: Vec<Vec<usize>>,
}

/// Indices of the `k` largest scores, highest first; ties go to the lower index.
pub fn select_top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Pool-based active learning: train from scratch on the labeled set, record
/// test accuracy, move the `acquire_per_round` best-scoring pool samples into
/// the labeled set, repeat. The curve has `rounds + 1` points.
pub fn active_learning_run(pool: &Dataset, test: &Dataset, cfg: &AcquisitionConfig) -> Result<ActiveLearningCurve> {
    cfg.validate(pool)?;
    let test_labels = test
        .labels()
        .ok_or_else(|| Error::InvalidTargets("active learning needs a classification test set".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let candidates: Vec<usize> = match (&pool.ambiguous, cfg.initial_clean_only) {
        (Some(flags), true) => (0..pool.len()).filter(|&i| !flags[i]).collect(),
        _ => (0..pool.len()).collect(),
    };
    if candidates.len() < cfg.initial_labeled {
        return Err(Error::PoolExhausted {
            requested: cfg.initial_labeled,
            available: candidates.len(),
        });
    }
    let mut labeled: Vec<usize> = index::sample(&mut rng, candidates.len(), cfg.initial_labeled)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    let mut in_labeled = vec![false; pool.len()];
    labeled.iter().for_each(|&i| in_labeled[i] = true);

    let mut curve = ActiveLearningCurve {
        labeled_sizes: Vec::with_capacity(cfg.rounds + 1),
        accuracies: Vec::with_capacity(cfg.rounds + 1),
        acquired: Vec::with_capacity(cfg.rounds),
    };
    for round in 0..=cfg.rounds {
        let train_set = pool.subset(&labeled);
        let mut recipe = cfg.recipe.clone();
        for tc in recipe.pretrain.iter_mut().chain(std::iter::once(&mut recipe.heads)) {
            tc.train_batch_size = tc.train_batch_size.min(train_set.len());
            tc.dataset_size = None;
        }
        let (ps, _) = fit_last_layer(&recipe, &train_set, cfg.repulsion.as_ref())?;
        let probs = predictive_mixture(&ps, &test.inputs)?;
        curve.labeled_sizes.push(labeled.len());
        curve.accuracies.push(accuracy(&probs, test_labels)?);
        if round == cfg.rounds {
            break;
        }

        let remaining: Vec<usize> = (0..pool.len()).filter(|&i| !in_labeled[i]).collect();
        let picked: Vec<usize> = match cfg.score {
            AcquisitionScore::Random => index::sample(&mut rng, remaining.len(), cfg.acquire_per_round)
                .into_iter()
                .map(|i| remaining[i])
                .collect(),
            kind => {
                let triples = decompose_batch(&ps, &pool.inputs.select_rows(&remaining))?;
                let scores: Vec<f64> = triples
                    .iter()
                    .map(|t| match kind {
                        AcquisitionScore::Epistemic => t.epistemic,
                        AcquisitionScore::Total => t.total,
                        _ => t.aleatoric,
                    })
                    .collect();
                if scores.iter().any(|s| s.is_nan()) {
                    return Err(Error::NonFinite(format!("acquisition scores in round {round}")));
                }
                select_top_k(&scores, cfg.acquire_per_round)
                    .into_iter()
                    .map(|i| remaining[i])
                    .collect()
            }
        };
        for &i in &picked {
            in_labeled[i] = true;
        }
        labeled.extend(&picked);
        curve.acquired.push(picked);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Method, TrainConfig};
    use crate::nn::{Activation, MlpSpec};
    use crate::tasks::{gen_ambiguous_mix, gen_blobs};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn top_k_never_skips_a_higher_score(scores in prop::collection::vec(-3i32..3, 1..40), k in 1usize..10) {
            let s: Vec<f64> = scores.iter().map(|&v| v as f64 * 0.5).collect();
            let k = k.min(s.len());
            let picked = select_top_k(&s, k);
            prop_assert_eq!(picked.len(), k);
            let min_picked = picked.iter().map(|&i| s[i]).fold(f64::INFINITY, f64::min);
            for i in 0..s.len() {
                if !picked.contains(&i) {
                    prop_assert!(s[i] <= min_picked);
                    // ties resolve toward lower indices
                    if s[i] == min_picked {
                        prop_assert!(picked.iter().all(|&p| s[p] > s[i] || p < i));
                    }
                }
            }
        }
    }

    fn small_cfg(score: AcquisitionScore) -> AcquisitionConfig {
        AcquisitionConfig {
            initial_labeled: 6,
            acquire_per_round: 3,
            rounds: 3,
            score,
            recipe: LastLayerRecipe {
                base_spec: MlpSpec::new(vec![2, 8, 8], Activation::Relu).unwrap(),
                head_spec: MlpSpec::new(vec![8, 3], Activation::Relu).unwrap(),
                particles: 4,
                pretrain: None,
                heads: TrainConfig {
                    step_size: 0.01,
                    steps: 20,
                    train_batch_size: 8,
                    method: Method::PlainEnsemble,
                    ..Default::default()
                },
                seed: 2,
            },
            repulsion: None,
            initial_clean_only: true,
            pool_ratio: Some((1, 2)),
            seed: 9,
        }
    }

    #[test]
    fn labeled_set_grows_per_round_and_is_reproducible() {
        let base = gen_blobs(1, 10, 3, 3.0, 0.5).unwrap();
        let pool = gen_ambiguous_mix(&base, 2.0 / 3.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let test = gen_blobs(2, 10, 3, 3.0, 0.5).unwrap();
        for score in [AcquisitionScore::Random, AcquisitionScore::Epistemic] {
            let cfg = small_cfg(score);
            let a = active_learning_run(&pool, &test, &cfg).unwrap();
            assert_eq!(a.labeled_sizes, vec![6, 9, 12, 15]);
            assert_eq!(a.accuracies.len(), 4);
            let mut all: Vec<usize> = a.acquired.concat();
            all.sort();
            all.dedup();
            assert_eq!(all.len(), 9);
            assert_eq!(a, active_learning_run(&pool, &test, &cfg).unwrap());
        }
    }

    #[test]
    fn exhausted_pool_and_bad_ratio() {
        let base = gen_blobs(1, 10, 3, 3.0, 0.5).unwrap();
        let pool = gen_ambiguous_mix(&base, 2.0 / 3.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let test = base.clone();
        let mut cfg = small_cfg(AcquisitionScore::Total);
        cfg.rounds = 100;
        assert!(matches!(
            active_learning_run(&pool, &test, &cfg),
            Err(Error::PoolExhausted { .. })
        ));
        let mut cfg = small_cfg(AcquisitionScore::Total);
        cfg.pool_ratio = Some((1, 60));
        assert!(active_learning_run(&pool, &test, &cfg).is_err());
    }
}
