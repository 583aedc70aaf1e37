//! Declarative experiment configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evalreport::{Adapt, EvalTaskSet};
use crate::metatrain::{TaskSource, TrainConfig, TrainError};
use crate::models::ModelSpec;
use crate::riskcore::check_alpha;
use crate::taskgen::{build_test_grid, GpConfig, GpSampler, SineDistConfig, TaskError, TestGridConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl From<TrainError> for ConfigError {
    fn from(e: TrainError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

impl From<TaskError> for ConfigError {
    fn from(e: TaskError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    /// Shifted sinusoid training distribution, evaluated on the amplitude × phase grid.
    Sine {
        #[serde(default)]
        train: SineDistConfig,
        #[serde(default)]
        test_grid: TestGridConfig,
    },
    /// GP curves for training and evaluation.
    Gp {
        #[serde(default)]
        gp: GpConfig,
        #[serde(default = "default_gp_eval_tasks")]
        eval_tasks: usize,
    },
}

fn default_gp_eval_tasks() -> usize {
    64
}

fn default_alphas() -> Vec<f64> {
    vec![0.7]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Confidence levels for the CVaR metric; the first is the headline one.
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    /// Seed of the per-task evaluation data.
    #[serde(default)]
    pub seed: u64,
    /// Target points per evaluation task; defaults to the training M.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { alphas: default_alphas(), seed: 0, targets: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub tasks: TaskConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Seeds for multi-seed commands; empty means just `train.seed`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_path_buf(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text, path)
    }

    /// Canonical TOML form, as written into run directories.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate()?;
        match (&self.train.model, &self.tasks) {
            (ModelSpec::Mlp(_), TaskConfig::Sine { train, test_grid }) => {
                train.validate()?;
                test_grid.validate()?;
            }
            (ModelSpec::Cnp(_), TaskConfig::Gp { gp, eval_tasks }) => {
                gp.validate()?;
                if *eval_tasks == 0 {
                    return Err(ConfigError::Invalid("tasks.eval_tasks must be at least 1".into()));
                }
            }
            (m, _) => return Err(ConfigError::Invalid(format!("model kind `{}` does not match the task kind", m.kind_name()))),
        }
        if self.eval.alphas.is_empty() {
            return Err(ConfigError::Invalid("eval.alphas must not be empty".into()));
        }
        for &a in &self.eval.alphas {
            check_alpha(a).map_err(|e| ConfigError::Invalid(format!("eval.alphas: {e}")))?;
        }
        if self.eval.targets == Some(0) {
            return Err(ConfigError::Invalid("eval.targets must be at least 1".into()));
        }
        Ok(())
    }

    pub fn seed_list(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.train.seed]
        } else {
            self.seeds.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.train.seed = seed;
        c
    }

    pub fn task_source(&self) -> Result<TaskSource, ConfigError> {
        Ok(match &self.tasks {
            TaskConfig::Sine { train, .. } => TaskSource::Sine(train.clone()),
            TaskConfig::Gp { gp, .. } => TaskSource::Gp(GpSampler::new(gp)?),
        })
    }

    pub fn eval_tasks(&self) -> Result<EvalTaskSet, ConfigError> {
        Ok(match &self.tasks {
            TaskConfig::Sine { test_grid, .. } => EvalTaskSet::Sine {
                tasks: build_test_grid(test_grid)?,
                shots: self.train.shots,
                targets: self.eval.targets.unwrap_or(self.train.targets),
            },
            TaskConfig::Gp { gp, eval_tasks } => EvalTaskSet::Gp { sampler: GpSampler::new(gp)?, n_tasks: *eval_tasks },
        })
    }

    pub fn adapt(&self) -> Adapt {
        match self.train.model {
            ModelSpec::Mlp(_) => Adapt::MamlOneStep { inner_lr: self.train.inner_lr },
            ModelSpec::Cnp(_) => Adapt::CnpCondition,
        }
    }
}
