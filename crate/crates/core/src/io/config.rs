//! TOML experiment configuration.
//!
//! Every table rejects unknown keys, and every file path is resolved against
//! the config's directory and checked before anything runs.
//!
//! Seeds are derived from the top-level `seed`: training data `seed`, test
//! data `seed + 100`, far-box OOD set `seed + 200`, ambiguous mixing
//! `seed + 10` (test: `seed + 60`), pretraining `seed`, particle training
//! `seed + 1`, initialization `seed + 2`, acquisition `seed + 3`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::dataset::load_dataset;
use crate::data::{Dataset, TargetKind};
use crate::engine::{Likelihood, Method, TrainConfig};
use crate::error::{Error, Result};
use crate::kernels::{Bandwidth, Distance, KernelConfig, Representation, Space};
use crate::nn::{Activation, MlpSpec};
use crate::repulsion::{ImageShape, RepulsionSource};
use crate::tasks::{gen_ambiguous_mix, gen_blobs, gen_far_box, gen_regression_toy, gen_two_moons, AcquisitionScore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskName {
    ToyRegression,
    ToyClassification,
    Train,
    Decompose,
    OodEval,
    ActiveLearn,
}

impl TaskName {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskName::ToyRegression => "toy-regression",
            TaskName::ToyClassification => "toy-classification",
            TaskName::Train => "train",
            TaskName::Decompose => "decompose",
            TaskName::OodEval => "ood-eval",
            TaskName::ActiveLearn => "active-learn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    RegressionToy,
    TwoMoons,
    Blobs,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetSpec {
    Class,
    Real,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FarBoxSection {
    pub inner: f64,
    pub outer: f64,
    #[serde(default = "default_test_n")]
    pub n: usize,
}

fn default_test_n() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub generator: Generator,
    /// Samples per cluster (regression toy), in total (two moons) or per class (blobs).
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub test_n: Option<usize>,
    #[serde(default)]
    pub noise: Option<f64>,
    #[serde(default)]
    pub classes: Option<usize>,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub std: Option<f64>,
    #[serde(default)]
    pub ambiguous_fraction: f64,
    #[serde(default)]
    pub test_ambiguous_fraction: f64,
    #[serde(default)]
    pub far_box: Option<FarBoxSection>,
    #[serde(default)]
    pub targets: Option<TargetSpec>,
    #[serde(default)]
    pub train_path: Option<PathBuf>,
    #[serde(default)]
    pub test_path: Option<PathBuf>,
    #[serde(default)]
    pub ood_paths: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelMode {
    FullEnsemble,
    MultiHead,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub mode: ModelMode,
    /// Full network widths (full ensemble) or base widths (multi-head).
    pub widths: Vec<usize>,
    /// Head widths; multi-head only.
    #[serde(default)]
    pub head: Option<Vec<usize>>,
    #[serde(default)]
    pub activation: Activation,
    pub particles: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    Plain,
    Param,
    Function,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LikelihoodName {
    Categorical,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_method")]
    pub method: MethodName,
    pub step_size: f64,
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_batch")]
    pub repulsion_batch_size: usize,
    #[serde(default = "one")]
    pub repulsion_weight: f64,
    #[serde(default = "default_prior")]
    pub prior_variance: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub spectral_coeff: Option<f64>,
    /// `[[step, multiplier], ...]`
    #[serde(default)]
    pub decay: Vec<(u64, f64)>,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub likelihood: Option<LikelihoodName>,
    #[serde(default)]
    pub noise_std: Option<f64>,
}

fn default_method() -> MethodName {
    MethodName::Function
}
fn default_batch() -> usize {
    128
}
fn one() -> f64 {
    1.0
}
fn default_prior() -> f64 {
    100.0
}
fn default_log_every() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum BandwidthSpec {
    Fixed(f64),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    #[serde(default)]
    pub distance: Distance,
    #[serde(default)]
    pub bandwidth: Option<BandwidthSpec>,
    #[serde(default)]
    pub representation: Representation,
}

impl KernelSection {
    fn to_kernel(&self, space: Space) -> Result<KernelConfig> {
        let bandwidth = match &self.bandwidth {
            None => Bandwidth::MedianHeuristic,
            Some(BandwidthSpec::Named(s)) if s == "median" => Bandwidth::MedianHeuristic,
            Some(BandwidthSpec::Named(s)) => {
                return Err(Error::InvalidConfig(format!("bandwidth must be a number or \"median\", got {s:?}")))
            }
            Some(BandwidthSpec::Fixed(v)) => Bandwidth::Fixed(*v),
        };
        let k = KernelConfig {
            space,
            distance: self.distance,
            bandwidth,
            representation: self.representation,
        };
        k.validate()?;
        Ok(k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceName {
    TrainInputs,
    PatchShuffle,
    OodPool,
    UniformNoise,
    UniformDomain,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepulsionSection {
    pub source: SourceName,
    #[serde(default)]
    pub bounds: Vec<(f64, f64)>,
    #[serde(default)]
    pub low: Option<f64>,
    #[serde(default)]
    pub high: Option<f64>,
    #[serde(default)]
    pub pool_path: Option<PathBuf>,
    #[serde(default)]
    pub patch_side: Option<usize>,
    /// `[height, width, channels]` of flattened image rows.
    #[serde(default)]
    pub image_shape: Option<(usize, usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub low: f64,
    pub high: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    #[serde(default = "default_bins")]
    pub ece_bins: usize,
    #[serde(default)]
    pub percent: bool,
    #[serde(default = "default_grid")]
    pub grid: GridSection,
    #[serde(default = "default_hist_bins")]
    pub histogram_bins: usize,
}

fn default_bins() -> usize {
    crate::metrics::DEFAULT_ECE_BINS
}
fn default_hist_bins() -> usize {
    30
}
fn default_grid() -> GridSection {
    GridSection {
        low: -6.0,
        high: 6.0,
        points: 200,
    }
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            ece_bins: default_bins(),
            percent: false,
            grid: default_grid(),
            histogram_bins: default_hist_bins(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreName {
    Epistemic,
    Total,
    Aleatoric,
    Random,
}

impl ScoreName {
    pub fn score(self) -> AcquisitionScore {
        match self {
            ScoreName::Epistemic => AcquisitionScore::Epistemic,
            ScoreName::Total => AcquisitionScore::Total,
            ScoreName::Aleatoric => AcquisitionScore::Aleatoric,
            ScoreName::Random => AcquisitionScore::Random,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreName::Epistemic => "epistemic",
            ScoreName::Total => "total",
            ScoreName::Aleatoric => "aleatoric",
            ScoreName::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActiveSection {
    #[serde(default = "default_initial")]
    pub initial: usize,
    #[serde(default = "default_per_round")]
    pub per_round: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_scores")]
    pub scores: Vec<ScoreName>,
    #[serde(default = "yes")]
    pub initial_clean_only: bool,
    #[serde(default)]
    pub pool_ratio: Option<(usize, usize)>,
}

fn default_initial() -> usize {
    20
}
fn default_per_round() -> usize {
    5
}
fn default_rounds() -> usize {
    55
}
fn default_scores() -> Vec<ScoreName> {
    vec![ScoreName::Epistemic, ScoreName::Total, ScoreName::Random]
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskName,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub data: DataSection,
    #[serde(default)]
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub pretrain: Option<TrainSection>,
    #[serde(default)]
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub kernel: Option<KernelSection>,
    #[serde(default)]
    pub repulsion: Option<RepulsionSection>,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub active: Option<ActiveSection>,
}

/// Generated or loaded data for one run.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: Dataset,
    pub test: Option<Dataset>,
    pub ood: Vec<Dataset>,
}

fn need<T: Copy>(v: Option<T>, key: &str) -> Result<T> {
    v.ok_or_else(|| Error::InvalidConfig(format!("missing data.{key}")))
}

impl ExperimentConfig {
    /// Parses and validates; relative paths are resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::ConfigParse(e.message().to_string()))?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    fn input_paths_mut(&mut self) -> Vec<&mut PathBuf> {
        let d = &mut self.data;
        let mut v: Vec<&mut PathBuf> = d.train_path.iter_mut().chain(d.test_path.iter_mut()).collect();
        v.extend(d.ood_paths.iter_mut());
        if let Some(r) = &mut self.repulsion {
            v.extend(r.pool_path.iter_mut());
        }
        v
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in self.input_paths_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(o) = &mut self.out_dir {
            if o.is_relative() {
                *o = base.join(&*o);
            }
        }
    }

    pub fn validate(&mut self) -> Result<()> {
        for p in self.input_paths_mut() {
            if !p.exists() {
                return Err(Error::MissingPath(p.clone()));
            }
        }
        let d = &self.data;
        if d.generator == Generator::File && d.train_path.is_none() {
            return Err(Error::InvalidConfig("generator \"file\" needs data.train_path".into()));
        }
        let needs_model = matches!(
            self.task,
            TaskName::ToyRegression | TaskName::ToyClassification | TaskName::Train | TaskName::ActiveLearn
        );
        if needs_model {
            if self.model.is_none() || self.train.is_none() {
                return Err(Error::InvalidConfig(format!(
                    "task {} needs [model] and [train] tables",
                    self.task.as_str()
                )));
            }
            self.model_specs()?;
            self.train_config()?;
            if let Some(p) = self.pretrain_config()? {
                p.validate()?;
            }
        }
        if self.task == TaskName::ActiveLearn && self.active.is_none() {
            return Err(Error::InvalidConfig("task active-learn needs an [active] table".into()));
        }
        if self.metrics.grid.points < 2 || !(self.metrics.grid.low < self.metrics.grid.high) {
            return Err(Error::InvalidConfig("metrics.grid needs low < high and at least 2 points".into()));
        }
        if self.metrics.ece_bins == 0 || self.metrics.histogram_bins == 0 {
            return Err(Error::InvalidConfig("bin counts must be at least 1".into()));
        }
        Ok(())
    }

    fn is_classification(&self) -> bool {
        match self.data.generator {
            Generator::RegressionToy => false,
            Generator::TwoMoons | Generator::Blobs => true,
            Generator::File => self.data.targets != Some(TargetSpec::Real),
        }
    }

    /// `(base or full spec, head spec)`.
    pub fn model_specs(&self) -> Result<(MlpSpec, Option<MlpSpec>)> {
        let m = self
            .model
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("missing [model] table".into()))?;
        if m.particles == 0 {
            return Err(Error::InvalidConfig("model.particles must be at least 1".into()));
        }
        let base = MlpSpec::new(m.widths.clone(), m.activation)?;
        match (m.mode, &m.head) {
            (ModelMode::FullEnsemble, None) => Ok((base, None)),
            (ModelMode::FullEnsemble, Some(_)) => Err(Error::InvalidConfig("model.head is only valid in multi-head mode".into())),
            (ModelMode::MultiHead, Some(h)) => Ok((base, Some(MlpSpec::new(h.clone(), m.activation)?))),
            (ModelMode::MultiHead, None) => Err(Error::InvalidConfig("multi-head mode needs model.head".into())),
        }
    }

    fn likelihood(&self, t: &TrainSection) -> Result<Likelihood> {
        let default = if self.is_classification() {
            LikelihoodName::Categorical
        } else {
            LikelihoodName::Gaussian
        };
        Ok(match t.likelihood.unwrap_or(default) {
            LikelihoodName::Categorical => Likelihood::Categorical,
            LikelihoodName::Gaussian => Likelihood::Gaussian {
                noise_std: t.noise_std.unwrap_or(crate::tasks::REGRESSION_NOISE_STD),
            },
        })
    }

    fn section_to_train(&self, t: &TrainSection, seed: u64) -> Result<TrainConfig> {
        let kernel = || -> Result<KernelSection> {
            Ok(self.kernel.clone().unwrap_or(KernelSection {
                distance: Distance::SqL2,
                bandwidth: None,
                representation: Representation::Logits,
            }))
        };
        let method = match t.method {
            MethodName::Plain => Method::PlainEnsemble,
            MethodName::Param => Method::ParamRepulsion(kernel()?.to_kernel(Space::Parameter)?),
            MethodName::Function => Method::FunctionRepulsion(kernel()?.to_kernel(Space::Function)?),
        };
        let cfg = TrainConfig {
            step_size: t.step_size,
            steps: t.steps,
            train_batch_size: t.batch_size,
            repulsion_batch_size: t.repulsion_batch_size,
            repulsion_weight: t.repulsion_weight,
            prior_variance: t.prior_variance,
            method,
            likelihood: self.likelihood(t)?,
            dataset_size: None,
            seed,
            decay: t.decay.clone(),
            momentum: t.momentum,
            spectral_coeff: t.spectral_coeff,
            log_every: t.log_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = self
            .train
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("missing [train] table".into()))?;
        let cfg = self.section_to_train(t, self.seed.wrapping_add(1))?;
        if cfg.method.needs_repulsion_batch() && self.repulsion.is_none() {
            return Err(Error::InvalidConfig("function-space training needs a [repulsion] table".into()));
        }
        Ok(cfg)
    }

    /// Pretraining always runs as a plain single network.
    pub fn pretrain_config(&self) -> Result<Option<TrainConfig>> {
        self.pretrain
            .as_ref()
            .map(|t| {
                let t = TrainSection {
                    method: MethodName::Plain,
                    ..t.clone()
                };
                self.section_to_train(&t, self.seed)
            })
            .transpose()
    }

    pub fn init_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }

    pub fn acquisition_seed(&self) -> u64 {
        self.seed.wrapping_add(3)
    }

    pub fn build_data(&self) -> Result<ExperimentData> {
        let d = &self.data;
        let s = self.seed;
        let test_n = d.test_n.unwrap_or(default_test_n());
        let (train, test) = match d.generator {
            Generator::RegressionToy => (gen_regression_toy(s, d.n.unwrap_or(40))?, None),
            Generator::TwoMoons => {
                let noise = d.noise.unwrap_or(0.1);
                let n = d.n.unwrap_or(200);
                (gen_two_moons(s, n, noise)?, Some(gen_two_moons(s + 100, test_n, noise)?))
            }
            Generator::Blobs => {
                let (k, radius, std) = (need(d.classes, "classes")?, need(d.radius, "radius")?, need(d.std, "std")?);
                let n = need(d.n, "n")?;
                let train = gen_blobs(s, n, k, radius, std)?;
                let train = gen_ambiguous_mix(&train, d.ambiguous_fraction, &mut ChaCha8Rng::seed_from_u64(s + 10))?;
                let per_class = test_n.div_ceil(k);
                let test = gen_blobs(s + 50, per_class, k, radius, std)?;
                let test = gen_ambiguous_mix(&test, d.test_ambiguous_fraction, &mut ChaCha8Rng::seed_from_u64(s + 60))?;
                (train, Some(test))
            }
            Generator::File => {
                let kind = if self.is_classification() { TargetKind::Class } else { TargetKind::Real };
                let path = d.train_path.as_ref().expect("validated");
                let train = load_dataset(path, kind, d.classes)?;
                let classes = train.targets.num_classes().or(d.classes);
                let test = d.test_path.as_ref().map(|p| load_dataset(p, kind, classes)).transpose()?;
                (train, test)
            }
        };
        let classes = train.targets.num_classes();
        let mut ood = Vec::new();
        if let Some(fb) = &d.far_box {
            ood.push(gen_far_box(s + 200, fb.n, train.dim(), fb.inner, fb.outer, classes.unwrap_or(1))?);
        }
        for p in &d.ood_paths {
            ood.push(load_dataset(p, TargetKind::Class, classes)?);
        }
        Ok(ExperimentData { train, test, ood })
    }

    pub fn repulsion_source(&self, train: &Dataset) -> Result<Option<RepulsionSource>> {
        let Some(r) = &self.repulsion else { return Ok(None) };
        let missing = |k: &str| Error::InvalidConfig(format!("repulsion source needs repulsion.{k}"));
        let src = match r.source {
            SourceName::TrainInputs => RepulsionSource::TrainInputs(train.inputs.clone()),
            SourceName::OodPool => {
                let p = r.pool_path.as_ref().ok_or_else(|| missing("pool_path"))?;
                let kind = train.targets.kind();
                RepulsionSource::OodPool(load_dataset(p, kind, train.targets.num_classes())?.inputs)
            }
            SourceName::UniformNoise => RepulsionSource::UniformNoise {
                low: r.low.ok_or_else(|| missing("low"))?,
                high: r.high.ok_or_else(|| missing("high"))?,
                dim: train.dim(),
            },
            SourceName::UniformDomain => {
                if r.bounds.is_empty() {
                    return Err(missing("bounds"));
                }
                RepulsionSource::UniformDomain { bounds: r.bounds.clone() }
            }
            SourceName::PatchShuffle => {
                let (height, width, channels) = r.image_shape.ok_or_else(|| missing("image_shape"))?;
                RepulsionSource::PatchShuffle {
                    data: train.inputs.clone(),
                    patch_side: r.patch_side.ok_or_else(|| missing("patch_side"))?,
                    shape: ImageShape { height, width, channels },
                }
            }
        };
        src.validate()?;
        Ok(Some(src))
    }
}
