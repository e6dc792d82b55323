use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{auroc, evaluate, EvalReport, DEFAULT_ECE_BINS};
use crate::particles::ParticleSet;
use crate::uncertainty::{decompose_batch, predictive_mixture, UncertaintyTriple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Epistemic,
    Total,
    Aleatoric,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 3] = [ScoreKind::Epistemic, ScoreKind::Total, ScoreKind::Aleatoric];

    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Epistemic => "epistemic",
            ScoreKind::Total => "total",
            ScoreKind::Aleatoric => "aleatoric",
        }
    }

    pub fn pick(self, t: &UncertaintyTriple) -> f64 {
        match self {
            ScoreKind::Epistemic => t.epistemic,
            ScoreKind::Total => t.total,
            ScoreKind::Aleatoric => t.aleatoric,
        }
    }
}

/// Extracts one score per input.
pub fn score_values(triples: &[UncertaintyTriple], kind: ScoreKind) -> Vec<f64> {
    triples.iter().map(|t| kind.pick(t)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OodEntry {
    pub ood_set: String,
    pub score: ScoreKind,
    pub auroc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OodReport {
    pub id: EvalReport,
    /// Set-major, then in `ScoreKind::ALL` order.
    pub entries: Vec<OodEntry>,
    pub id_scores: Vec<UncertaintyTriple>,
    pub ood_scores: Vec<Vec<UncertaintyTriple>>,
}

impl OodReport {
    pub fn auroc(&self, ood_set: &str, score: ScoreKind) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.ood_set == ood_set && e.score == score)
            .map(|e| e.auroc)
    }
}

/// In-distribution metrics plus, per OOD set and score kind, the AUROC of
/// separating OOD (positive) from ID (negative) inputs by that score.
pub fn ood_eval(ps: &ParticleSet, id_test: &Dataset, ood_sets: &[Dataset]) -> Result<OodReport> {
    let labels = id_test
        .labels()
        .ok_or_else(|| Error::InvalidTargets("OOD evaluation needs a classification test set".into()))?;
    let probs = predictive_mixture(ps, &id_test.inputs)?;
    let id = evaluate(&probs, labels, DEFAULT_ECE_BINS)?;
    let id_scores = decompose_batch(ps, &id_test.inputs)?;
    let mut entries = Vec::with_capacity(ood_sets.len() * 3);
    let mut ood_scores = Vec::with_capacity(ood_sets.len());
    for set in ood_sets {
        let scores = decompose_batch(ps, &set.inputs)?;
        for kind in ScoreKind::ALL {
            entries.push(OodEntry {
                ood_set: set.name.clone(),
                score: kind,
                auroc: auroc(&score_values(&id_scores, kind), &score_values(&scores, kind))?,
            });
        }
        ood_scores.push(scores);
    }
    Ok(OodReport {
        id,
        entries,
        id_scores,
        ood_scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, MlpSpec};
    use crate::particles::Mode;
    use crate::tasks::gen_two_moons;

    #[test]
    fn single_particle_gives_chance_epistemic_auroc() {
        let spec = MlpSpec::new(vec![2, 8, 2], Activation::Relu).unwrap();
        let ps = ParticleSet::init(Mode::FullEnsemble, spec, None, 1, 3).unwrap();
        let id = gen_two_moons(1, 100, 0.1).unwrap();
        let mut far = gen_two_moons(2, 80, 0.1).unwrap();
        far.inputs.scale(10.0);
        far.name = "far".into();
        let r = ood_eval(&ps, &id, &[far]).unwrap();
        assert_eq!(r.auroc("far", ScoreKind::Epistemic), Some(0.5));
        assert_eq!(r.entries.len(), 3);
        assert!(r.id_scores.iter().all(|t| t.epistemic == 0.0));
    }

    #[test]
    fn same_distribution_is_near_chance() {
        let spec = MlpSpec::new(vec![2, 8, 2], Activation::Tanh).unwrap();
        let ps = ParticleSet::init(Mode::FullEnsemble, spec, None, 5, 3).unwrap();
        let id = gen_two_moons(1, 1000, 0.2).unwrap();
        let mut other = gen_two_moons(9, 1000, 0.2).unwrap();
        other.name = "copy".into();
        let r = ood_eval(&ps, &id, &[other]).unwrap();
        for kind in ScoreKind::ALL {
            let a = r.auroc("copy", kind).unwrap();
            assert!((a - 0.5).abs() < 0.03, "{kind:?}: {a}");
        }
    }
}
