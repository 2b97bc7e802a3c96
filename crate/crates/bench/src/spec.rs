//! Experiment descriptions: objective families, optimizer ids and presets.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mso_core::engine::EngineConfig;
use mso_core::inner::BfgsConfig;
use mso_core::objectives::{load_mnist_train, make_classifier_objective, ClassifierSpec, LabelledImages, RegressionConfig};
use mso_core::train::{TaskDistribution, TaskFamily};
use serde::{Deserialize, Serialize};

use crate::BenchError;

/// Environment variable naming the directory with the MNIST IDX files.
pub const DATA_DIR_ENV: &str = "MSO_DATA_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    Quadratic {
        dim: usize,
        #[serde(default = "default_condition")]
        condition_number: f64,
    },
    Rosenbrock {
        dim: usize,
        #[serde(default = "one")]
        a: f64,
        #[serde(default = "hundred")]
        b: f64,
    },
    RobustRegression {
        #[serde(default = "default_clusters")]
        clusters: usize,
        #[serde(default = "default_per_cluster")]
        per_cluster: usize,
        #[serde(default = "hundred_usize")]
        features: usize,
        #[serde(default = "default_spread")]
        mean_spread: f64,
        #[serde(default = "default_noise")]
        noise_std: f64,
        #[serde(default = "one")]
        c: f64,
    },
    Classifier {
        digits: Vec<u8>,
        /// Keep the first this-many images of the selected digits.
        #[serde(default)]
        images: Option<usize>,
        #[serde(default = "default_hidden")]
        hidden: usize,
        #[serde(default = "default_batch")]
        batch: usize,
        /// Falls back to the `MSO_DATA_DIR` environment variable.
        #[serde(default)]
        data_dir: Option<PathBuf>,
    },
}

fn default_condition() -> f64 {
    1e3
}
fn one() -> f64 {
    1.0
}
fn hundred() -> f64 {
    100.0
}
fn hundred_usize() -> usize {
    100
}
fn default_clusters() -> usize {
    4
}
fn default_per_cluster() -> usize {
    25
}
fn default_spread() -> f64 {
    3.0
}
fn default_noise() -> f64 {
    0.1
}
fn default_hidden() -> usize {
    10
}
fn default_batch() -> usize {
    8192
}

impl ObjectiveSpec {
    pub fn robust_regression() -> Self {
        ObjectiveSpec::RobustRegression {
            clusters: 4,
            per_cluster: 25,
            features: 100,
            mean_spread: 3.0,
            noise_std: 0.1,
            c: 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveSpec::Quadratic { .. } => "quadratic",
            ObjectiveSpec::Rosenbrock { .. } => "rosenbrock",
            ObjectiveSpec::RobustRegression { .. } => "robust-regression",
            ObjectiveSpec::Classifier { .. } => "classifier",
        }
    }

    /// Builds the task family. The classifier reads its data here.
    pub fn family(&self) -> Result<TaskFamily<f64>, BenchError> {
        Ok(match self {
            ObjectiveSpec::Quadratic { dim, condition_number } => {
                TaskFamily::Quadratic { dim: *dim, condition_number: *condition_number }
            }
            ObjectiveSpec::Rosenbrock { dim, a, b } => TaskFamily::Rosenbrock { dim: *dim, a: *a, b: *b },
            ObjectiveSpec::RobustRegression { clusters, per_cluster, features, mean_spread, noise_std, c } => {
                TaskFamily::RobustRegression {
                    config: RegressionConfig {
                        clusters: *clusters,
                        per_cluster: *per_cluster,
                        features: *features,
                        mean_spread: *mean_spread,
                        noise_std: *noise_std,
                    },
                    c: *c,
                }
            }
            ObjectiveSpec::Classifier { digits, images, hidden, batch, data_dir } => {
                let dir = match data_dir {
                    Some(d) => d.clone(),
                    None => std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).ok_or_else(|| {
                        BenchError::InvalidSpec(format!("classifier needs data_dir or {DATA_DIR_ENV}"))
                    })?,
                };
                let data = select_digits(load_mnist_train(&dir)?, digits, *images);
                let mut spec = ClassifierSpec::new(data, digits.iter().copied());
                spec.hidden_units = *hidden;
                spec.batch_size = *batch;
                TaskFamily::Classifier { template: make_classifier_objective(&spec)? }
            }
        })
    }
}

/// The first `limit` samples whose label is in `digits`.
pub fn select_digits(data: LabelledImages, digits: &[u8], limit: Option<usize>) -> LabelledImages {
    let p = data.rows * data.cols;
    let mut out = LabelledImages { rows: data.rows, cols: data.cols, pixels: Vec::new(), labels: Vec::new() };
    for i in 0..data.len() {
        if limit.is_some_and(|n| out.len() >= n) {
            break;
        }
        if digits.contains(&data.labels[i]) {
            out.labels.push(data.labels[i]);
            out.pixels.extend_from_slice(&data.pixels[i * p..(i + 1) * p]);
        }
    }
    out
}

/// Optimizer identifiers as written on the command line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum OptimizerId {
    /// SESOP: evict the oldest step.
    Fifo,
    Rb,
    Delta(usize),
    Learned { checkpoint: PathBuf, greedy: bool },
    Cg,
    OrthOnly,
    Gd,
    /// `None` runs the learning-rate grid and keeps the best run per task.
    Adam(Option<f64>),
}

impl FromStr for OptimizerId {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BenchError::InvalidSpec(format!("unknown optimizer '{s}'"));
        Ok(match s {
            "fifo" | "sesop" => OptimizerId::Fifo,
            "rb" => OptimizerId::Rb,
            "cg" => OptimizerId::Cg,
            "orth-only" => OptimizerId::OrthOnly,
            "gd" => OptimizerId::Gd,
            "adam" => OptimizerId::Adam(None),
            _ => {
                if let Some(i) = s.strip_prefix("delta-") {
                    OptimizerId::Delta(i.parse().map_err(|_| bad())?)
                } else if let Some(p) = s.strip_prefix("learned:") {
                    OptimizerId::Learned { checkpoint: PathBuf::from(p), greedy: true }
                } else if let Some(p) = s.strip_prefix("learned-sample:") {
                    OptimizerId::Learned { checkpoint: PathBuf::from(p), greedy: false }
                } else if let Some(lr) = s.strip_prefix("adam:") {
                    let lr: f64 = lr.parse().map_err(|_| bad())?;
                    if !(lr >= 0.0 && lr.is_finite()) {
                        return Err(bad());
                    }
                    OptimizerId::Adam(Some(lr))
                } else {
                    return Err(bad());
                }
            }
        })
    }
}

impl fmt::Display for OptimizerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimizerId::Fifo => write!(f, "fifo"),
            OptimizerId::Rb => write!(f, "rb"),
            OptimizerId::Delta(i) => write!(f, "delta-{i}"),
            OptimizerId::Learned { checkpoint, greedy: true } => write!(f, "learned:{}", checkpoint.display()),
            OptimizerId::Learned { checkpoint, greedy: false } => write!(f, "learned-sample:{}", checkpoint.display()),
            OptimizerId::Cg => write!(f, "cg"),
            OptimizerId::OrthOnly => write!(f, "orth-only"),
            OptimizerId::Gd => write!(f, "gd"),
            OptimizerId::Adam(None) => write!(f, "adam"),
            OptimizerId::Adam(Some(lr)) => write!(f, "adam:{lr}"),
        }
    }
}

impl TryFrom<String> for OptimizerId {
    type Error = BenchError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<OptimizerId> for String {
    fn from(id: OptimizerId) -> Self {
        id.to_string()
    }
}

impl OptimizerId {
    /// Short label usable in file names.
    pub fn label(&self) -> String {
        match self {
            OptimizerId::Learned { greedy: true, .. } => "learned".into(),
            OptimizerId::Learned { greedy: false, .. } => "learned-sample".into(),
            other => other.to_string().replace(':', "-"),
        }
    }

    pub fn is_subspace(&self) -> bool {
        !matches!(self, OptimizerId::Gd | OptimizerId::Adam(_))
    }
}

/// Accepts `a..b` (half-open), `a..=b` or a comma-separated list.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, BenchError> {
    let bad = || BenchError::InvalidSpec(format!("bad seed list '{s}'"));
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..=") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        return Ok((a..=b).collect());
    }
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        return Ok((a..b).collect());
    }
    s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}
fn default_iters() -> usize {
    100
}
fn default_d() -> usize {
    10
}
fn default_h() -> usize {
    5
}
fn yes() -> bool {
    true
}
fn default_out() -> PathBuf {
    PathBuf::from("results")
}

/// One optimizer on one objective family over a list of seeds. Seed `s`
/// builds instance `s` of the family and draws the initial point with `s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub objective: ObjectiveSpec,
    #[serde(default = "fifo")]
    pub optimizer: OptimizerId,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_h")]
    pub h: usize,
    #[serde(default = "yes")]
    pub orth: bool,
    #[serde(default = "yes")]
    pub normalize: bool,
    /// Standard deviation of the Gaussian initial point.
    #[serde(default = "one")]
    pub x0_scale: f64,
    /// Inner BFGS iteration cap.
    #[serde(default = "default_inner")]
    pub inner_max_iters: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn fifo() -> OptimizerId {
    OptimizerId::Fifo
}
fn default_inner() -> usize {
    BfgsConfig::<f64>::default().max_iters
}

impl ExperimentSpec {
    pub fn new(objective: ObjectiveSpec, optimizer: OptimizerId) -> Self {
        Self {
            objective,
            optimizer,
            seeds: default_seeds(),
            iters: default_iters(),
            d: default_d(),
            h: default_h(),
            orth: true,
            normalize: true,
            x0_scale: 1.0,
            inner_max_iters: default_inner(),
            out: default_out(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, BenchError> {
        let spec: Self = toml::from_str(s).map_err(|e| BenchError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self, BenchError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.seeds.is_empty() {
            return Err(BenchError::InvalidSpec("seeds must be nonempty".into()));
        }
        if self.optimizer.is_subspace() {
            self.engine_config().validate()?;
        }
        Ok(())
    }

    /// Engine settings shared by the subspace optimizers. `cg` and
    /// `orth-only` override `d`, ORTH and normalisation when run.
    pub fn engine_config(&self) -> EngineConfig<f64> {
        EngineConfig {
            d: self.d,
            h: self.h,
            use_orth: self.orth,
            normalize_directions: self.normalize,
            max_outer_iters: self.iters,
            bfgs: BfgsConfig { max_iters: self.inner_max_iters, ..Default::default() },
            ..Default::default()
        }
    }

    pub fn task_distribution(&self) -> Result<TaskDistribution<f64>, BenchError> {
        let mut dist = TaskDistribution::new(self.objective.family()?, self.seeds.iter().copied());
        dist.x0_scale = self.x0_scale;
        Ok(dist)
    }
}

/// Named experiment settings.
pub fn preset(name: &str) -> Result<ExperimentSpec, BenchError> {
    Ok(match name {
        "quadratic-suite" => ExperimentSpec {
            seeds: (0..50).collect(),
            iters: 60,
            ..ExperimentSpec::new(ObjectiveSpec::Quadratic { dim: 100, condition_number: 1e3 }, OptimizerId::Rb)
        },
        "rosenbrock" => ExperimentSpec {
            seeds: (0..20).collect(),
            iters: 300,
            ..ExperimentSpec::new(ObjectiveSpec::Rosenbrock { dim: 100, a: 1.0, b: 100.0 }, OptimizerId::Rb)
        },
        "robust-regression" => ExperimentSpec {
            seeds: (0..100).collect(),
            iters: 100,
            ..ExperimentSpec::new(ObjectiveSpec::robust_regression(), OptimizerId::Rb)
        },
        "mnist-reduced" => ExperimentSpec {
            seeds: (0..5).collect(),
            iters: 8,
            d: 5,
            ..ExperimentSpec::new(
                ObjectiveSpec::Classifier { digits: vec![0, 1], images: Some(1000), hidden: 10, batch: 256, data_dir: None },
                OptimizerId::Rb,
            )
        },
        _ => return Err(BenchError::InvalidSpec(format!("unknown preset '{name}'"))),
    })
}

pub const PRESETS: [&str; 4] = ["quadratic-suite", "rosenbrock", "robust-regression", "mnist-reduced"];
