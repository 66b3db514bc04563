//! TOML experiment configuration.
//!
//! ```toml
//! name = "sphere-table"
//! task = "distance-table"      # distance-table | spectrum | classify
//! seeds = [1, 2]
//! output = "out/sphere-table"
//!
//! [data]
//! source = "sphere"            # sphere | two-moons | mnist
//! n = 3000
//! d = 100
//! m = 2
//!
//! [noise]
//! mode = "ambient-ball"
//! sigmas = [0.1, 0.5]
//!
//! [regularizer]
//! schedule = "sphere"          # sphere | sigma | fixed | none
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage, StageExt};
use crate::experiments::metrics::Mask;
use crate::experiments::repro::{sphere_epsilon, sphere_radius};
use crate::graph::GraphKind;
use crate::pointcloud::NoiseMode;
use crate::regularize::RegularizerSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    DistanceTable,
    Spectrum,
    Classify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Sphere,
    TwoMoons,
    Mnist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: Source,
    pub n: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    /// MNIST digit pair, a → +1 and b → −1
    #[serde(default = "default_digits")]
    pub digits: [u8; 2],
    /// MNIST directory; falls back to the environment variable, then the bundled fixture
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

fn default_d() -> usize {
    100
}
fn default_m() -> usize {
    2
}
fn default_digits() -> [u8; 2] {
    [4, 9]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default)]
    pub sigmas: Vec<f64>,
}

fn default_mode() -> String {
    "ambient-ball".into()
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            sigmas: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// r = √σ/3 at σ = 0.1, √σ otherwise
    Sphere,
    /// r = σ
    Sigma,
    /// the `specs` list
    Fixed,
    /// no regularization
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerConfig {
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    /// e.g. `["ball:0.3", "knn:10"]`; a grid for cross-validation when classifying
    #[serde(default)]
    pub specs: Vec<String>,
}

fn default_schedule() -> Schedule {
    Schedule::None
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self {
            schedule: default_schedule(),
            specs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    #[serde(default = "default_kind")]
    pub kind: String,
    /// ε-graph radius; 2n^{−1/4} when absent
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default = "default_k")]
    pub k: usize,
    /// manifold volume for ε-graph weights; 4π for the 2-sphere, 1 otherwise
    #[serde(default)]
    pub vol: Option<f64>,
}

fn default_kind() -> String {
    "self-tuning".into()
}
fn default_k() -> usize {
    10
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            kind: default_kind(),
            eps: None,
            k: default_k(),
            vol: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyConfig {
    pub labels: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// cross-validation repeats; used when more than one regularizer is given
    #[serde(default = "default_repeats")]
    pub cv_repeats: usize,
}

fn default_gamma() -> f64 {
    crate::classify::DEFAULT_GAMMA
}
fn default_repeats() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    #[serde(default = "default_count")]
    pub count: usize,
}

fn default_count() -> usize {
    100
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self { count: default_count() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    /// `epsilon:x`, `mutual-knn:k` or `geodesic:r`
    #[serde(default)]
    pub mask: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub task: Task,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub regularizer: RegularizerConfig,
    #[serde(default)]
    pub graph: GraphConfig,
    #[serde(default)]
    pub classify: Option<ClassifyConfig>,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl FromStr for ExperimentConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| config_err(e.to_string())).stage(Stage::Config)?;
        cfg.validate().stage(Stage::Config)?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    /// Read and validate; a relative `output` is resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).stage(Stage::Config)?;
        let mut cfg: ExperimentConfig = text.parse()?;
        if cfg.output.is_relative() {
            if let Some(parent) = path.parent() {
                cfg.output = parent.join(&cfg.output);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn noise_mode(&self) -> Result<NoiseMode> {
        self.noise.mode.parse()
    }

    /// σ values of the sweep; a single noiseless run when none are given.
    pub fn sigmas(&self) -> Vec<f64> {
        if self.noise.sigmas.is_empty() {
            vec![0.0]
        } else {
            self.noise.sigmas.clone()
        }
    }

    pub fn graph_kind(&self) -> Result<GraphKind> {
        self.graph.kind.parse()
    }

    pub fn eps(&self) -> f64 {
        self.graph.eps.unwrap_or_else(|| sphere_epsilon(self.data.n))
    }

    pub fn vol(&self) -> f64 {
        self.graph.vol.unwrap_or(match (self.data.source, self.data.m) {
            (Source::Sphere, m) => crate::bounds::sphere_volume(m),
            _ => 1.0,
        })
    }

    /// Regularizers to apply at noise level σ.
    pub fn regularizers(&self, sigma: f64) -> Result<Vec<RegularizerSpec>> {
        Ok(match self.regularizer.schedule {
            Schedule::Sphere => vec![RegularizerSpec::Ball { r: sphere_radius(sigma) }],
            Schedule::Sigma => vec![RegularizerSpec::Ball { r: sigma }],
            Schedule::None => vec![RegularizerSpec::Identity],
            Schedule::Fixed => self
                .regularizer
                .specs
                .iter()
                .map(|s| s.parse())
                .collect::<Result<_>>()?,
        })
    }

    pub fn mask(&self) -> Result<Mask> {
        match &self.report.mask {
            Some(s) => s.parse(),
            None => Ok(match self.data.source {
                Source::TwoMoons => Mask::MutualKnn(self.graph.k),
                _ => Mask::Epsilon(sphere_epsilon(self.data.n)),
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(config_err("`seeds` must list at least one seed"));
        }
        let d = &self.data;
        if d.n < 2 {
            return Err(config_err(format!("data.n = {} is too small", d.n)));
        }
        if d.source == Source::Sphere && (d.m < 1 || d.d < d.m + 1) {
            return Err(Error::InvalidDimension(format!("sphere needs 1 <= m < d, got m = {}, d = {}", d.m, d.d)));
        }
        if d.source == Source::TwoMoons && d.d < 2 {
            return Err(Error::InvalidDimension(format!("two moons needs d >= 2, got {}", d.d)));
        }
        if d.digits[0] > 9 || d.digits[1] > 9 || d.digits[0] == d.digits[1] {
            return Err(config_err(format!("bad digit pair {:?}", d.digits)));
        }
        let mode = self.noise_mode()?;
        if d.source == Source::Mnist && self.noise.sigmas.iter().any(|&s| s > 0.0) {
            return Err(config_err("MNIST images are used as observed; noise.sigmas must be empty"));
        }
        if mode == NoiseMode::NormalSpace && d.source != Source::Sphere {
            return Err(Error::UnsupportedMode("normal-space noise is defined for the sphere only".into()));
        }
        if let Some(&s) = self.noise.sigmas.iter().find(|s| !(**s >= 0.0) || !s.is_finite()) {
            return Err(config_err(format!("noise level {s} must be finite and non-negative")));
        }
        if matches!(self.regularizer.schedule, Schedule::Sphere | Schedule::Sigma)
            && self.sigmas().iter().any(|&s| s <= 0.0)
        {
            return Err(config_err("a σ-driven radius schedule needs positive noise levels"));
        }
        if self.regularizer.schedule == Schedule::Fixed && self.regularizer.specs.is_empty() {
            return Err(config_err("schedule `fixed` needs at least one entry in `specs`"));
        }
        for sigma in self.sigmas() {
            for spec in self.regularizers(sigma)? {
                spec.validate(d.n)?;
            }
        }
        let kind = self.graph_kind()?;
        if self.graph.k == 0 || self.graph.k >= d.n {
            return Err(Error::InvalidK { k: self.graph.k, n: d.n });
        }
        if !(self.eps() > 0.0) || !(self.vol() > 0.0) {
            return Err(config_err("graph.eps and graph.vol must be positive"));
        }
        match self.task {
            Task::DistanceTable => {
                if d.source == Source::Mnist {
                    return Err(config_err("distance tables need a clean reference; MNIST has none"));
                }
                let mask = self.mask()?;
                if matches!(mask, Mask::Geodesic(_)) && d.source != Source::Sphere {
                    return Err(config_err("geodesic masks apply to sphere data only"));
                }
            }
            Task::Spectrum => {
                if self.spectrum.count == 0 || self.spectrum.count > d.n {
                    return Err(config_err(format!("spectrum.count = {} out of range", self.spectrum.count)));
                }
                if kind == GraphKind::External {
                    return Err(config_err("graph.kind `external` cannot be built from a config"));
                }
            }
            Task::Classify => {
                if d.source == Source::Sphere {
                    return Err(config_err("classification needs labelled data (two-moons or mnist)"));
                }
                let c = self
                    .classify
                    .as_ref()
                    .ok_or_else(|| config_err("task `classify` needs a [classify] section"))?;
                if c.labels == 0 {
                    return Err(Error::InsufficientLabels("classify.labels is 0".into()));
                }
                if c.labels > d.n {
                    return Err(Error::InsufficientLabels(format!("{} labels for {} points", c.labels, d.n)));
                }
                if !(c.gamma > 0.0) {
                    return Err(config_err("classify.gamma must be positive"));
                }
                if !matches!(kind, GraphKind::SelfTuning | GraphKind::Knn(_)) {
                    return Err(config_err("the classifier runs on `self-tuning` or `knn-*` graphs"));
                }
            }
        }
        Ok(())
    }

    /// Classifier graph for `graph.kind` (classification task only).
    pub fn classifier_graph(&self) -> Result<crate::classify::ClassifierGraph> {
        use crate::classify::ClassifierGraph;
        Ok(match self.graph_kind()? {
            GraphKind::Knn(rule) => ClassifierGraph::KnnVariant { k: self.graph.k, rule },
            _ => ClassifierGraph::FullyConnected { k: self.graph.k },
        })
    }
}
