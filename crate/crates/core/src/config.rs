//! Run configuration: a TOML file with `[run]`, `[binning]`, `[train]` and
//! `[eval]` sections. Every key has a default except `run.dataset`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::distance::TrainSettings;
use crate::error::{Error, Result};
use crate::eval::GoalStrategy;
use crate::mdp::FeatureKind;
use crate::policy::{ActMode, BootstrapSettings, PolicyBackend, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Dwsl,
    Gcsl,
    Awr,
    Expectile,
    DwslB,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "dwsl" => Algorithm::Dwsl,
            "gcsl" => Algorithm::Gcsl,
            "awr" => Algorithm::Awr,
            "expectile" => Algorithm::Expectile,
            "dwsl_b" => Algorithm::DwslB,
            _ => {
                return Err(Error::Config(format!(
                    "unknown algorithm `{s}` (dwsl | gcsl | awr | expectile | dwsl_b)"
                )))
            }
        })
    }
}

impl std::str::FromStr for PolicyBackend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tabular" => Ok(PolicyBackend::Tabular),
            "mlp" => Ok(PolicyBackend::Mlp),
            _ => Err(Error::Config(format!("unknown backend `{s}` (tabular | mlp)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Optional; when set it must match the dataset header.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<String>,
    pub dataset: PathBuf,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default = "default_backend")]
    pub backend: PolicyBackend,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_algorithm() -> Algorithm {
    Algorithm::Dwsl
}

fn default_backend() -> PolicyBackend {
    PolicyBackend::Tabular
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("run")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BinningSection {
    pub n_step: usize,
}

impl Default for BinningSection {
    fn default() -> Self {
        Self { n_step: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub alpha: f64,
    pub beta: f64,
    /// `inf` disables clipping.
    pub clip: f64,
    /// Policy training steps (MLP backend).
    pub steps: usize,
    /// Distance-model training steps (MLP distance models).
    pub distance_steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub features: FeatureKind,
    pub expectile_tau: f64,
    pub target_period: usize,
    pub polyak: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let b = BootstrapSettings::default();
        Self {
            alpha: t.alpha,
            beta: t.beta,
            clip: t.clip,
            steps: t.net.steps,
            distance_steps: t.net.steps,
            batch: t.net.batch,
            lr: t.net.lr,
            seed: t.net.seed,
            hidden: t.net.hidden,
            features: t.net.features,
            expectile_tau: 0.9,
            target_period: b.target_period,
            polyak: b.polyak,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Evaluate every this many policy steps (MLP backend).
    pub every: usize,
    pub episodes: usize,
    pub strategy: GoalStrategy,
    pub mode: ActMode,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            every: 2000,
            episodes: 100,
            strategy: GoalStrategy::DatasetStates,
            mode: ActMode::Greedy,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    #[serde(default)]
    pub binning: BinningSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

impl RunConfig {
    /// Parse and validate. Relative paths are resolved against the config
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.run.dataset.is_relative() {
            cfg.run.dataset = base.join(&cfg.run.dataset);
        }
        if cfg.run.out_dir.is_relative() {
            cfg.run.out_dir = base.join(&cfg.run.out_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse without touching the file system; call [`RunConfig::validate`]
    /// before use.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !self.run.dataset.is_file() {
            return Err(Error::Config(format!("dataset {} does not exist", self.run.dataset.display())));
        }
        self.validate_values()
    }

    /// Range checks that do not depend on the file system.
    pub fn validate_values(&self) -> Result<()> {
        let t = &self.train;
        if self.binning.n_step == 0 {
            return Err(Error::Config("binning.n_step must be positive".into()));
        }
        if self.run.algorithm == Algorithm::DwslB && self.binning.n_step != 1 {
            return Err(Error::Config("algorithm dwsl_b requires binning.n_step = 1".into()));
        }
        if !(t.expectile_tau > 0.5 && t.expectile_tau < 1.0) {
            return Err(Error::Config(format!("train.expectile_tau = {} outside (0.5, 1)", t.expectile_tau)));
        }
        if t.target_period == 0 || !(t.polyak > 0.0 && t.polyak <= 1.0) {
            return Err(Error::Config("train.target_period must be positive and train.polyak in (0, 1]".into()));
        }
        if self.eval.every == 0 || self.eval.episodes == 0 {
            return Err(Error::Config("eval.every and eval.episodes must be positive".into()));
        }
        self.train_config().validate()
    }

    pub fn net_settings(&self, steps: usize) -> TrainSettings {
        let t = &self.train;
        TrainSettings {
            steps,
            batch: t.batch,
            lr: t.lr,
            seed: t.seed,
            hidden: t.hidden.clone(),
            features: t.features,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            alpha: self.train.alpha,
            beta: self.train.beta,
            clip: self.train.clip,
            net: self.net_settings(self.train.steps),
        }
    }

    pub fn bootstrap(&self) -> BootstrapSettings {
        BootstrapSettings {
            target_period: self.train.target_period,
            polyak: self.train.polyak,
        }
    }
}
