//! Config files: a TOML document with a `[train]` section covering every
//! training field and a `[tasks]` section that either names task files or
//! describes a seeded mixture to generate.

use crate::envs::{self, EnvError, TaskKind, TaskMixture, TaskSpec};
use crate::rng::derive_seed;
use crate::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config file {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid tasks section: {0}")]
    Tasks(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Where the training and held-out tasks come from: explicit files, or a
/// generated mixture.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TasksSection {
    /// Load training tasks from this file instead of generating them.
    pub file: Option<PathBuf>,
    /// Load held-out tasks from this file (required with `file`).
    pub holdout_file: Option<PathBuf>,
    pub kind: TaskKind,
    pub count: usize,
    pub holdout_count: usize,
    pub challenging_fraction: f64,
    pub challenging_cutoff: f64,
    /// Mixture seed; defaults to the run seed.
    pub seed: Option<u64>,
}

impl Default for TasksSection {
    fn default() -> Self {
        Self {
            file: None,
            holdout_file: None,
            kind: TaskKind::ModularChain,
            count: 40,
            holdout_count: 16,
            challenging_fraction: 0.3,
            challenging_cutoff: 1.5e-2,
            seed: None,
        }
    }
}

impl TasksSection {
    /// Produces (train, holdout) task lists. Generated holdout tasks use an
    /// independent seed stream over the same mixture parameters.
    pub fn resolve(&self, run_seed: u64) -> Result<(Vec<TaskSpec>, Vec<TaskSpec>), ConfigError> {
        if let Some(file) = &self.file {
            let holdout_file = self.holdout_file.as_ref().ok_or_else(|| {
                ConfigError::Tasks("tasks.file requires tasks.holdout_file".into())
            })?;
            let train = envs::load_tasks(file)?;
            let holdout = envs::load_tasks(holdout_file)?;
            return Ok((train, holdout));
        }
        let base_seed = self.seed.unwrap_or(run_seed);
        let train = envs::generate_mixture(&TaskMixture {
            kind: self.kind,
            total_count: self.count,
            challenging_fraction: self.challenging_fraction,
            challenging_cutoff: self.challenging_cutoff,
            seed: derive_seed(base_seed, &[0x7461]),
        })?;
        let mut holdout = envs::generate_mixture(&TaskMixture {
            kind: self.kind,
            total_count: self.holdout_count,
            challenging_fraction: self.challenging_fraction,
            challenging_cutoff: self.challenging_cutoff,
            seed: derive_seed(base_seed, &[0x686f]),
        })?;
        // Distinct id ranges keep per-task seed streams independent.
        for (i, task) in holdout.iter_mut().enumerate() {
            task.id = (self.count + i) as u64;
        }
        Ok((train, holdout))
    }
}

/// One run's full configuration file.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct FileConfig {
    pub train: TrainConfig,
    pub tasks: TasksSection,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
