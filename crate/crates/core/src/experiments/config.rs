//! Experiment configuration, read from TOML.
//!
//! ```toml
//! mechanism = "dvp"            # none | dvp | pvp
//! alphas = [0.01, 0.1, 0.5, 1.0]
//! rho = 0.1
//! c_r = 50.0
//! iterations = 100
//! seeds = [1, 2, 3]
//! topology = "ring:4"
//! output_dir = "out"
//!
//! [data]
//! source = "synthetic"         # or "file" with path = "...", format = "csv" | "libsvm"
//! n = 200
//! d = 5
//! ```
//!
//! Relative `data.path` and `schedule` paths are resolved against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::admm::AdmmConfig;
use crate::data::{load_dataset, normalize, partition, synthetic_points, DataFormat, DataPoint, PartitionStrategy, PartitionedDataset};
use crate::dvp::{AlphaSchedule, ZetaRule};
use crate::error::{Error, Result};
use crate::experiments::tradeoff::{C6Rule, DEFAULT_OMEGA};
use crate::model::{ErmParams, Loss, LossKind, Regularizer, RegularizerKind};
use crate::network::{NetworkGraph, TopologySpec};
use crate::noise::{StreamKey, StreamPurpose};
use crate::trace::Mechanism;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    /// Separable points with optional label noise; see [`synthetic_points`].
    Synthetic {
        n: usize,
        d: usize,
        #[serde(default)]
        flip: f64,
        #[serde(default)]
        seed: u64,
    },
    /// A CSV or LIBSVM file, rescaled into the unit ball.
    File {
        path: PathBuf,
        #[serde(default = "default_format")]
        format: String,
        #[serde(default)]
        seed: u64,
    },
}

fn default_format() -> String {
    "csv".into()
}

impl DataSource {
    fn seed(&self) -> u64 {
        match self {
            DataSource::Synthetic { seed, .. } | DataSource::File { seed, .. } => *seed,
        }
    }
}

fn default_topology() -> String {
    "ring:4".into()
}
fn default_alphas() -> Vec<f64> {
    vec![0.01, 0.1, 0.5, 1.0]
}
fn default_eta() -> f64 {
    crate::admm::DEFAULT_ETA
}
fn default_iterations() -> usize {
    100
}
fn default_inner_tol() -> f64 {
    crate::solver::DEFAULT_TOL
}
fn default_init_scale() -> f64 {
    crate::admm::DEFAULT_INIT_SCALE
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_omega() -> [f64; 4] {
    DEFAULT_OMEGA
}
fn default_mechanism() -> Mechanism {
    Mechanism::Dvp
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default = "default_topology")]
    pub topology: String,
    #[serde(default = "default_mechanism")]
    pub mechanism: Mechanism,
    /// Constant privacy levels swept by the suites.
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    /// Optional per-round schedule file; overrides `alphas` for `run`.
    #[serde(default)]
    pub schedule: Option<PathBuf>,
    pub rho: f64,
    pub c_r: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_inner_tol")]
    pub inner_tol: f64,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[serde(default)]
    pub zeta_rule: ZetaRule,
    /// Rounds of primal perturbation before the final dual-perturbed round.
    #[serde(default)]
    pub t_stop: Option<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default)]
    pub regularizer: RegularizerKind,
    #[serde(default)]
    pub c6: C6Rule,
    #[serde(default = "default_omega")]
    pub omega: [f64; 4],
    /// Share of points held out for the misclassification rate.
    #[serde(default)]
    pub test_fraction: f64,
}

/// Everything a suite needs, built once from a config.
pub struct Prepared {
    pub train: PartitionedDataset,
    pub test: Vec<DataPoint>,
    pub graph: NetworkGraph,
    pub admm: AdmmConfig,
    pub loss: Box<dyn Loss>,
    pub reg: Box<dyn Regularizer>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let DataSource::File { path: p, .. } = &mut cfg.data {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(s) = &mut cfg.schedule {
            if s.is_relative() {
                *s = base.join(&*s);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return bad("alphas must be a nonempty list of positive values".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad(format!("test_fraction must lie in [0, 1), got {}", self.test_fraction));
        }
        if let DataSource::File { format, .. } = &self.data {
            format.parse::<DataFormat>()?;
        }
        self.topology.parse::<TopologySpec>()?;
        self.admm_config()?.validate()
    }

    pub fn admm_config(&self) -> Result<AdmmConfig> {
        let mut cfg = AdmmConfig::new(ErmParams::new(self.c_r, self.rho)?);
        cfg.eta = self.eta;
        cfg.max_iters = self.iterations;
        cfg.inner_tol = self.inner_tol;
        cfg.init_scale = self.init_scale;
        Ok(cfg)
    }

    /// The `run` schedule: the schedule file when given, else the first `alphas` entry.
    pub fn schedule(&self) -> Result<AlphaSchedule> {
        match &self.schedule {
            Some(p) => AlphaSchedule::load(p),
            None => Ok(AlphaSchedule::Constant(self.alphas[0])),
        }
    }

    /// Loads or generates the points, holds out the test share and deals the
    /// rest to the graph's nodes.
    pub fn prepare(&self) -> Result<Prepared> {
        let points = match &self.data {
            DataSource::Synthetic { n, d, flip, seed } => synthetic_points(*n, *d, *flip, *seed)?,
            DataSource::File { path, format, .. } => {
                let loaded = load_dataset(path, format.parse()?)?;
                normalize(&loaded.points)?.points
            }
        };
        let seed = self.data.seed();
        let mut order: Vec<usize> = (0..points.len()).collect();
        let n_test = (points.len() as f64 * self.test_fraction).floor() as usize;
        if n_test > 0 {
            order.shuffle(&mut StreamKey::new(seed, StreamPurpose::Partition, 1, 0).rng());
        }
        let test = order[..n_test].iter().map(|&i| points[i].clone()).collect();
        let train_pts: Vec<DataPoint> = order[n_test..].iter().map(|&i| points[i].clone()).collect();
        let graph = self.topology.parse::<TopologySpec>()?.build()?;
        let train = partition(&train_pts, &graph, &PartitionStrategy::Even, seed)?;
        Ok(Prepared { train, test, graph, admm: self.admm_config()?, loss: self.loss.build(), reg: self.regularizer.build() })
    }
}
