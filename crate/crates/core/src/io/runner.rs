//! Config-driven experiments that write CSV and SVG artifacts to a directory.

use std::fs;
use std::path::{Path, PathBuf};

use super::config::{ExperimentConfig, ExperimentData, ModelMode, TaskName};
use super::csv::{
    accuracy_curve_report, column_mean_std, metrics_report, ood_matrix_report, particles_report, scores_report,
    train_log_report, CsvReport,
};
use super::svg::{plot_curves, plot_histograms, plot_regression_bands};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::data::Dataset;
use crate::engine::{train, TrainLog};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::metrics::evaluate;
use crate::particles::{Mode, ParticleSet};
use crate::tasks::{active_learning_run, ood_eval, AcquisitionConfig, LastLayerRecipe, OodReport, ScoreKind};
use crate::uncertainty::{decompose_batch, predictive_mixture};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Replaces the config's seed.
    pub seed: Option<u64>,
    /// Report NLL and ECE multiplied by 100.
    pub percent: bool,
    /// Input checkpoint for decompose/ood-eval, output path for training tasks.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    /// Short human-readable result lines.
    pub summary: Vec<String>,
}

struct Writer<'a> {
    dir: &'a Path,
    out: RunOutput,
}

impl Writer<'_> {
    fn csv(&mut self, name: &str, report: &CsvReport) -> Result<()> {
        let p = self.dir.join(name);
        report.write(&p)?;
        self.out.files.push(p);
        Ok(())
    }

    fn text(&mut self, name: &str, content: &str) -> Result<()> {
        let p = self.dir.join(name);
        fs::write(&p, content)?;
        self.out.files.push(p);
        Ok(())
    }

    fn checkpoint(&mut self, ps: &ParticleSet, explicit: Option<&Path>) -> Result<()> {
        let p = explicit.map_or_else(|| self.dir.join("model.rpve"), Path::to_path_buf);
        save_checkpoint(ps, &p)?;
        self.out.files.push(p);
        Ok(())
    }
}

/// Evenly spaced points from `low` to `high` inclusive.
pub fn linspace(low: f64, high: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![low],
        _ => (0..points)
            .map(|j| low + (high - low) * j as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// `n × G` matrix of scalar particle outputs on a 1-D grid.
pub fn grid_predictions(ps: &ParticleSet, grid: &[f64]) -> Result<Matrix> {
    if ps.input_dim() != 1 || ps.output_dim() != 1 {
        return Err(Error::InvalidConfig("grid predictions need a 1-D input and scalar output".into()));
    }
    let inputs = Matrix::from_vec(grid.len(), 1, grid.to_vec());
    let per = ps.predict_all(&inputs)?;
    let mut out = Matrix::zeros(per.len(), grid.len());
    for (i, m) in per.iter().enumerate() {
        out.row_mut(i).copy_from_slice(m.as_slice());
    }
    Ok(out)
}

/// Trains the particle set described by the config on `train_set`.
pub fn fit_from_config(cfg: &ExperimentConfig, train_set: &Dataset) -> Result<(ParticleSet, TrainLog)> {
    let (spec, _) = cfg.model_specs()?;
    let model = cfg.model.as_ref().expect("validated by model_specs");
    let heads = cfg.train_config()?;
    let repulsion = cfg.repulsion_source(train_set)?;
    match model.mode {
        ModelMode::FullEnsemble => {
            if cfg.pretrain.is_some() {
                return Err(Error::InvalidConfig("[pretrain] needs multi-head mode".into()));
            }
            let ps = ParticleSet::init(Mode::FullEnsemble, spec, None, model.particles, cfg.init_seed())?;
            train(&ps, train_set, repulsion.as_ref(), &heads)
        }
        ModelMode::MultiHead => {
            let recipe = recipe_from_config(cfg)?;
            let ps = recipe.initial_set(train_set)?;
            train(&ps, train_set, repulsion.as_ref(), &heads)
        }
    }
}

fn recipe_from_config(cfg: &ExperimentConfig) -> Result<LastLayerRecipe> {
    let (base_spec, head) = cfg.model_specs()?;
    let head_spec = head.ok_or_else(|| Error::InvalidConfig("this task needs multi-head mode".into()))?;
    Ok(LastLayerRecipe {
        base_spec,
        head_spec,
        particles: cfg.model.as_ref().expect("checked").particles,
        pretrain: cfg.pretrain_config()?,
        heads: cfg.train_config()?,
        seed: cfg.init_seed(),
    })
}

fn need_test(data: &ExperimentData) -> Result<&Dataset> {
    data.test
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("this task needs a test set (data.test_path or a generator)".into()))
}

fn write_ood(w: &mut Writer, report: &OodReport, ood: &[Dataset], percent: bool, bins: usize) -> Result<()> {
    w.csv("metrics.csv", &metrics_report(&report.id, percent))?;
    w.csv("ood_auroc.csv", &ood_matrix_report(report)?)?;
    let mut scores = scores_report("id", &report.id_scores)?;
    for (set, triples) in ood.iter().zip(&report.ood_scores) {
        scores.rows.extend(scores_report(&set.name, triples)?.rows);
    }
    w.csv("scores.csv", &scores)?;
    let epi: Vec<Vec<f64>> = std::iter::once(&report.id_scores)
        .chain(&report.ood_scores)
        .map(|t| t.iter().map(|s| s.epistemic).collect())
        .collect();
    let names: Vec<&str> = std::iter::once("id").chain(ood.iter().map(|d| d.name.as_str())).collect();
    let series: Vec<(&str, &[f64])> = names.iter().zip(&epi).map(|(n, v)| (*n, v.as_slice())).collect();
    w.text("uncertainty_hist.svg", &plot_histograms("Epistemic uncertainty", "epistemic", &series, bins)?)?;
    for e in &report.entries {
        w.out
            .summary
            .push(format!("auroc {} {} {:.4}", e.ood_set, e.score.name(), e.auroc));
    }
    Ok(())
}

/// Runs one experiment and writes its artifacts to `opts.out_dir`.
pub fn run_experiment(task: TaskName, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput> {
    let mut cfg = cfg.clone();
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    fs::create_dir_all(&opts.out_dir)?;
    let percent = opts.percent || cfg.metrics.percent;
    let mut w = Writer {
        dir: &opts.out_dir,
        out: RunOutput::default(),
    };
    let data = cfg.build_data()?;
    let ckpt = opts.checkpoint.as_deref();
    match task {
        TaskName::ToyRegression => {
            let (ps, log) = fit_from_config(&cfg, &data.train)?;
            let g = &cfg.metrics.grid;
            let grid = linspace(g.low, g.high, g.points);
            let preds = grid_predictions(&ps, &grid)?;
            let train_pts: Vec<(f64, f64)> = data
                .train
                .inputs
                .as_slice()
                .iter()
                .zip(data.train.targets.values().unwrap_or(&[]))
                .map(|(&x, &y)| (x, y))
                .collect();
            w.text("bands.svg", &plot_regression_bands(&grid, &preds, &train_pts)?)?;
            w.csv("particles.csv", &particles_report(&grid, &preds)?)?;
            w.csv("trainlog.csv", &train_log_report(&log))?;
            w.checkpoint(&ps, ckpt)?;
            let (_, std) = column_mean_std(&preds);
            let band_mean = |lo: f64, hi: f64| {
                let v: Vec<f64> = grid
                    .iter()
                    .zip(&std)
                    .filter(|(x, _)| (lo..=hi).contains(&x.abs()))
                    .map(|(_, s)| *s)
                    .collect();
                v.iter().sum::<f64>() / v.len().max(1) as f64
            };
            let (far, near) = (band_mean(3.0, 6.0), band_mean(1.0, 2.0));
            w.out.summary.push(format!("mean std |x| in [3,6]: {far:.6}"));
            w.out.summary.push(format!("mean std |x| in [1,2]: {near:.6}"));
        }
        TaskName::ToyClassification => {
            let test = need_test(&data)?;
            let (ps, log) = fit_from_config(&cfg, &data.train)?;
            w.csv("trainlog.csv", &train_log_report(&log))?;
            let report = ood_eval(&ps, test, &data.ood)?;
            write_ood(&mut w, &report, &data.ood, percent, cfg.metrics.histogram_bins)?;
            w.checkpoint(&ps, ckpt)?;
            w.out.summary.push(format!("test accuracy {:.4}", report.id.accuracy));
        }
        TaskName::Train => {
            let (ps, log) = fit_from_config(&cfg, &data.train)?;
            w.csv("trainlog.csv", &train_log_report(&log))?;
            if let (Some(test), Some(labels)) = (&data.test, data.test.as_ref().and_then(|t| t.labels())) {
                let probs = predictive_mixture(&ps, &test.inputs)?;
                let r = evaluate(&probs, labels, cfg.metrics.ece_bins)?;
                w.csv("metrics.csv", &metrics_report(&r, percent))?;
                w.out.summary.push(format!("test accuracy {:.4}", r.accuracy));
            }
            w.checkpoint(&ps, ckpt)?;
            if let Some(last) = log.last() {
                w.out.summary.push(format!("final mean nll {:.6}", last.mean_nll));
            }
        }
        TaskName::Decompose => {
            let ps = load_checkpoint(ckpt.ok_or_else(|| Error::InvalidConfig("decompose needs --checkpoint".into()))?)?;
            let set = data.test.as_ref().unwrap_or(&data.train);
            if set.labels().is_none() {
                return Err(Error::InvalidConfig("decompose needs classification data".into()));
            }
            let triples = decompose_batch(&ps, &set.inputs)?;
            w.csv("scores.csv", &scores_report(&set.name, &triples)?)?;
            let cols: Vec<Vec<f64>> = ScoreKind::ALL
                .iter()
                .map(|k| triples.iter().map(|t| k.pick(t)).collect())
                .collect();
            let series: Vec<(&str, &[f64])> = ScoreKind::ALL
                .iter()
                .zip(&cols)
                .map(|(k, v)| (k.name(), v.as_slice()))
                .collect();
            w.text(
                "uncertainty_hist.svg",
                &plot_histograms("Uncertainty decomposition", "nats", &series, cfg.metrics.histogram_bins)?,
            )?;
            for (k, v) in ScoreKind::ALL.iter().zip(&cols) {
                w.out
                    .summary
                    .push(format!("mean {} {:.6}", k.name(), v.iter().sum::<f64>() / v.len() as f64));
            }
        }
        TaskName::OodEval => {
            let ps = load_checkpoint(ckpt.ok_or_else(|| Error::InvalidConfig("ood-eval needs --checkpoint".into()))?)?;
            let test = need_test(&data)?;
            if data.ood.is_empty() {
                return Err(Error::InvalidConfig("ood-eval needs data.far_box or data.ood_paths".into()));
            }
            let report = ood_eval(&ps, test, &data.ood)?;
            write_ood(&mut w, &report, &data.ood, percent, cfg.metrics.histogram_bins)?;
        }
        TaskName::ActiveLearn => {
            let test = need_test(&data)?;
            let active = cfg.active.as_ref().expect("validated");
            let recipe = recipe_from_config(&cfg)?;
            let repulsion = cfg.repulsion_source(&data.train)?;
            let mut curves = Vec::new();
            for score in &active.scores {
                let ac = AcquisitionConfig {
                    initial_labeled: active.initial,
                    acquire_per_round: active.per_round,
                    rounds: active.rounds,
                    score: score.score(),
                    recipe: recipe.clone(),
                    repulsion: repulsion.clone(),
                    initial_clean_only: active.initial_clean_only,
                    pool_ratio: active.pool_ratio,
                    seed: cfg.acquisition_seed(),
                };
                let curve = active_learning_run(&data.train, test, &ac)?;
                w.out.summary.push(format!(
                    "{} final accuracy {:.4}",
                    score.as_str(),
                    curve.accuracies.last().copied().unwrap_or(f64::NAN)
                ));
                curves.push((score.as_str(), curve));
            }
            let named: Vec<(&str, &_)> = curves.iter().map(|(n, c)| (*n, c)).collect();
            w.csv("accuracy_curve.csv", &accuracy_curve_report(&named)?)?;
            let xs: Vec<Vec<f64>> = curves
                .iter()
                .map(|(_, c)| c.labeled_sizes.iter().map(|&s| s as f64).collect())
                .collect();
            let lines: Vec<(&str, &[f64], &[f64])> = curves
                .iter()
                .zip(&xs)
                .map(|((n, c), x)| (*n, x.as_slice(), c.accuracies.as_slice()))
                .collect();
            w.text(
                "accuracy_curve.svg",
                &plot_curves("Active learning", "labeled samples", "test accuracy", &lines)?,
            )?;
        }
    }
    Ok(w.out)
}

/// One-line description of a checkpoint.
pub fn checkpoint_info(ps: &ParticleSet) -> String {
    let mode = match ps.mode() {
        Mode::FullEnsemble => "full-ensemble",
        Mode::MultiHead => "multi-head",
    };
    let widths = |s: &crate::nn::MlpSpec| format!("{:?}", s.widths()).replace(' ', "");
    let mut s = format!("mode={mode} n={} base={}", ps.n(), widths(ps.base_spec()));
    if let Some(h) = ps.head_spec() {
        s.push_str(&format!(" head={}", widths(h)));
    }
    let act = match ps.base_spec().activation() {
        crate::nn::Activation::Relu => "relu",
        crate::nn::Activation::Tanh => "tanh",
    };
    s.push_str(&format!(
        " activation={act} step={} seed={} base_frozen={} trainable_parameters={}",
        ps.step(),
        ps.seed(),
        ps.base_frozen(),
        ps.trainable_parameter_count()
    ));
    s
}
