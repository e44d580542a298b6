//! Seeded multi-run experiment orchestration.
//!
//! A plan sweeps variants (algorithm configurations) over challenging-task
//! fractions and seeds. Every cell resolves to a full train config; cells
//! run in a worker pool, persist their outcome under a content hash (so a
//! rerun of a finished plan recomputes nothing), and failures are recorded
//! without stopping sibling cells. Task mixtures depend only on (fraction,
//! seed), never on the variant, so variants compare on identical tasks.
//!
//! Aggregation reports per-cell medians and quartiles and emits three CSV
//! tables: success by variant and fraction, the ablation grid over the
//! three mechanism toggles, and the per-variant quality table (success,
//! mean tokens, repetition rate).

use crate::config::ConfigError;
use crate::envs::{generate_mixture, TaskKind, TaskMixture};
use crate::rng::{derive_seed, fnv1a};
use crate::trainer::{train, TrainConfig, TrainMode};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

const TAG_TRAIN_TASKS: u64 = 0x5431;
const TAG_HOLDOUT_TASKS: u64 = 0x5432;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("cannot read plan file {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed plan file {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One algorithm configuration in the sweep. The advantage rule comes from
/// the mode; the two dynamic mechanisms are toggles over the base config's
/// round and iteration budgets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub mode: TrainMode,
    /// Dynamic additional sampling. Defaults to true exactly when the mode
    /// is gdepo.
    pub das: Option<bool>,
    /// Dynamic additional iterations; requires das.
    pub dai: Option<bool>,
}

impl Variant {
    pub fn named(name: &str, mode: TrainMode) -> Self {
        Self {
            name: name.to_string(),
            mode,
            das: None,
            dai: None,
        }
    }

    pub fn with_toggles(name: &str, mode: TrainMode, das: bool, dai: bool) -> Self {
        Self {
            name: name.to_string(),
            mode,
            das: Some(das),
            dai: Some(dai),
        }
    }

    pub fn das_enabled(&self) -> bool {
        self.das.unwrap_or(self.mode == TrainMode::Gdepo)
    }

    pub fn dai_enabled(&self) -> bool {
        self.dai.unwrap_or(self.mode == TrainMode::Gdepo)
    }

    pub fn era_enabled(&self) -> bool {
        self.mode == TrainMode::Gdepo
    }

    /// The cell's train config: base with this variant's toggles applied.
    pub fn resolve(&self, base: &TrainConfig, seed: u64) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.mode = self.mode;
        cfg.max_rounds = if self.das_enabled() { base.max_rounds } else { 1 };
        cfg.extra_iters = if self.dai_enabled() { base.extra_iters } else { 1 };
        cfg.seed = seed;
        cfg
    }
}

/// Task-generation parameters shared by every cell; the challenging
/// fraction and seed come from the cell itself.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct PlanTasks {
    pub kind: TaskKind,
    pub count: usize,
    pub holdout_count: usize,
    pub challenging_cutoff: f64,
}

impl Default for PlanTasks {
    fn default() -> Self {
        Self {
            kind: TaskKind::ModularChain,
            count: 40,
            holdout_count: 16,
            challenging_cutoff: 1.5e-2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub name: String,
    pub seeds: Vec<u64>,
    pub fractions: Vec<f64>,
    pub variants: Vec<Variant>,
    pub base: TrainConfig,
    pub tasks: PlanTasks,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seeds: (0..10).collect(),
            fractions: vec![0.1, 0.3, 0.5],
            variants: vec![
                Variant::named("grpo_binary", TrainMode::GrpoBinary),
                Variant::named("gdepo", TrainMode::Gdepo),
            ],
            base: TrainConfig::default(),
            tasks: PlanTasks::default(),
        }
    }
}

impl ExperimentPlan {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let plan: ExperimentPlan = toml::from_str(&text).map_err(|e| ExperimentError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.seeds.is_empty() || self.fractions.is_empty() || self.variants.is_empty() {
            return Err(ExperimentError::Plan(
                "seeds, fractions, and variants must be non-empty".into(),
            ));
        }
        let mut distinct = self.seeds.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() != self.seeds.len() {
            return Err(ExperimentError::Plan("seeds must be distinct".into()));
        }
        let mut names: Vec<&str> = self.variants.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.variants.len() {
            return Err(ExperimentError::Plan("variant names must be distinct".into()));
        }
        for variant in &self.variants {
            if variant.dai_enabled() && !variant.das_enabled() {
                return Err(ExperimentError::Plan(format!(
                    "variant {}: dynamic additional iterations depend on dynamic additional \
                     sampling; enable das or disable dai",
                    variant.name
                )));
            }
            if variant.das_enabled() && self.base.max_rounds < 2 {
                return Err(ExperimentError::Plan(format!(
                    "variant {} enables das but base.max_rounds is {}",
                    variant.name, self.base.max_rounds
                )));
            }
            if variant.dai_enabled() && self.base.extra_iters < 2 {
                return Err(ExperimentError::Plan(format!(
                    "variant {} enables dai but base.extra_iters is {}",
                    variant.name, self.base.extra_iters
                )));
            }
        }
        for fraction in &self.fractions {
            if !(0.0..=1.0).contains(fraction) {
                return Err(ExperimentError::Plan(format!(
                    "fraction {fraction} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Everything that identifies one cell's computation; its serialization is
/// the resume key.
#[derive(Debug, Clone, Serialize)]
struct CellKey<'a> {
    config: &'a TrainConfig,
    tasks: &'a PlanTasks,
    fraction: f64,
    seed: u64,
}

/// One finished (or failed) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellOutcome {
    pub variant: String,
    pub das: bool,
    pub era: bool,
    pub dai: bool,
    pub fraction: f64,
    pub seed: u64,
    pub initial_success: f64,
    pub final_success: f64,
    pub mean_tokens: f64,
    pub repetition_rate: f64,
    pub total_steps: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CellFile {
    key_hash: String,
    outcome: CellOutcome,
}

/// Aggregated statistics for one (variant, fraction) cell of the sweep.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateRow {
    pub variant: String,
    pub das: bool,
    pub era: bool,
    pub dai: bool,
    pub fraction: f64,
    pub seeds_used: usize,
    pub initial_success_median: f64,
    pub success_median: f64,
    pub success_q1: f64,
    pub success_q3: f64,
    pub mean_tokens_median: f64,
    pub repetition_rate_median: f64,
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub outcomes: Vec<CellOutcome>,
    pub rows: Vec<AggregateRow>,
    pub executed: usize,
    pub skipped: usize,
    pub failed: usize,
}

impl ExperimentReport {
    pub fn row(&self, variant: &str, fraction: f64) -> Option<&AggregateRow> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && (r.fraction - fraction).abs() < 1e-12)
    }
}

/// Lower and upper Tukey hinges plus the median.
fn quartiles(values: &mut [f64]) -> (f64, f64, f64) {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let median = |v: &[f64]| -> f64 {
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        }
    };
    let n = values.len();
    let mid = median(values);
    if n == 1 {
        return (values[0], mid, values[0]);
    }
    let half = n / 2;
    let lower = &values[..half];
    let upper = &values[n - half..];
    (median(lower), mid, median(upper))
}

fn median_of(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    let (_, m, _) = quartiles(&mut sorted);
    m
}

/// Runs one cell from scratch.
fn run_cell(
    plan: &ExperimentPlan,
    variant: &Variant,
    fraction: f64,
    seed: u64,
) -> Result<CellOutcome, String> {
    let cfg = variant.resolve(&plan.base, seed);
    let mixture = |tag: u64, count: usize| TaskMixture {
        kind: plan.tasks.kind,
        total_count: count,
        challenging_fraction: fraction,
        challenging_cutoff: plan.tasks.challenging_cutoff,
        seed: derive_seed(seed, &[tag, fraction.to_bits()]),
    };
    let tasks = generate_mixture(&mixture(TAG_TRAIN_TASKS, plan.tasks.count))
        .map_err(|e| e.to_string())?;
    let mut holdout = generate_mixture(&mixture(TAG_HOLDOUT_TASKS, plan.tasks.holdout_count))
        .map_err(|e| e.to_string())?;
    for (i, task) in holdout.iter_mut().enumerate() {
        task.id = (plan.tasks.count + i) as u64;
    }
    let run = train(&cfg, &tasks, &holdout).map_err(|e| e.to_string())?;
    let initial = run.metrics.initial_eval().expect("initial eval recorded");
    let last = run.metrics.final_eval().expect("final eval recorded");
    Ok(CellOutcome {
        variant: variant.name.clone(),
        das: variant.das_enabled(),
        era: variant.era_enabled(),
        dai: variant.dai_enabled(),
        fraction,
        seed,
        initial_success: initial.success_rate,
        final_success: last.success_rate,
        mean_tokens: last.mean_tokens,
        repetition_rate: last.repetition_rate,
        total_steps: run.metrics.total_ascent_steps(),
        error: None,
    })
}

/// Executes a plan with resumable cells and writes the aggregated CSV
/// tables under `out_dir`.
pub fn run_experiment(
    plan: &ExperimentPlan,
    out_dir: &Path,
) -> Result<ExperimentReport, ExperimentError> {
    plan.validate()?;
    let cells_dir = out_dir.join(&plan.name).join("cells");
    std::fs::create_dir_all(&cells_dir)?;

    struct CellSpec<'a> {
        variant: &'a Variant,
        fraction: f64,
        seed: u64,
        key_hash: String,
        path: PathBuf,
    }

    let mut specs = Vec::new();
    for variant in &plan.variants {
        for &fraction in &plan.fractions {
            for &seed in &plan.seeds {
                let cfg = variant.resolve(&plan.base, seed);
                let key = CellKey {
                    config: &cfg,
                    tasks: &plan.tasks,
                    fraction,
                    seed,
                };
                let serialized = serde_json::to_string(&key).expect("cell key serializes");
                let key_hash = format!("{:016x}", fnv1a(serialized.as_bytes()));
                let path = cells_dir.join(format!("{}-{key_hash}.json", variant.name));
                specs.push(CellSpec {
                    variant,
                    fraction,
                    seed,
                    key_hash,
                    path,
                });
            }
        }
    }

    let results: Vec<(CellOutcome, bool)> = specs
        .par_iter()
        .map(|spec| {
            if let Ok(text) = std::fs::read_to_string(&spec.path) {
                if let Ok(cached) = serde_json::from_str::<CellFile>(&text) {
                    if cached.key_hash == spec.key_hash {
                        return (cached.outcome, false);
                    }
                }
            }
            let outcome = match run_cell(plan, spec.variant, spec.fraction, spec.seed) {
                Ok(outcome) => outcome,
                Err(message) => CellOutcome {
                    variant: spec.variant.name.clone(),
                    das: spec.variant.das_enabled(),
                    era: spec.variant.era_enabled(),
                    dai: spec.variant.dai_enabled(),
                    fraction: spec.fraction,
                    seed: spec.seed,
                    initial_success: f64::NAN,
                    final_success: f64::NAN,
                    mean_tokens: f64::NAN,
                    repetition_rate: f64::NAN,
                    total_steps: 0,
                    error: Some(message),
                },
            };
            let file = CellFile {
                key_hash: spec.key_hash.clone(),
                outcome: outcome.clone(),
            };
            let text = serde_json::to_string_pretty(&file).expect("cell serializes");
            if let Err(e) = std::fs::write(&spec.path, text) {
                eprintln!("warning: cannot persist cell {}: {e}", spec.path.display());
            }
            (outcome, true)
        })
        .collect();

    let executed = results.iter().filter(|(_, fresh)| *fresh).count();
    let skipped = results.len() - executed;
    let outcomes: Vec<CellOutcome> = results.into_iter().map(|(o, _)| o).collect();
    let failed = outcomes.iter().filter(|o| o.error.is_some()).count();

    let mut rows = Vec::new();
    for variant in &plan.variants {
        for &fraction in &plan.fractions {
            let cell: Vec<&CellOutcome> = outcomes
                .iter()
                .filter(|o| {
                    o.variant == variant.name
                        && (o.fraction - fraction).abs() < 1e-12
                        && o.error.is_none()
                })
                .collect();
            if cell.is_empty() {
                continue;
            }
            let mut successes: Vec<f64> = cell.iter().map(|o| o.final_success).collect();
            let (q1, median, q3) = quartiles(&mut successes);
            rows.push(AggregateRow {
                variant: variant.name.clone(),
                das: variant.das_enabled(),
                era: variant.era_enabled(),
                dai: variant.dai_enabled(),
                fraction,
                seeds_used: cell.len(),
                initial_success_median: median_of(
                    &cell.iter().map(|o| o.initial_success).collect::<Vec<_>>(),
                ),
                success_median: median,
                success_q1: q1,
                success_q3: q3,
                mean_tokens_median: median_of(
                    &cell.iter().map(|o| o.mean_tokens).collect::<Vec<_>>(),
                ),
                repetition_rate_median: median_of(
                    &cell.iter().map(|o| o.repetition_rate).collect::<Vec<_>>(),
                ),
            });
        }
    }

    let plan_dir = out_dir.join(&plan.name);
    write_success_table(&plan_dir.join("success_by_fraction.csv"), &rows)?;
    write_ablation_table(&plan_dir.join("ablation.csv"), &rows)?;
    write_quality_table(&plan_dir.join("quality.csv"), &rows)?;

    Ok(ExperimentReport {
        outcomes,
        rows,
        executed,
        skipped,
        failed,
    })
}

fn write_success_table(path: &Path, rows: &[AggregateRow]) -> std::io::Result<()> {
    let mut out = String::from("# schema: gdepo.success_by_fraction.v1\n");
    out.push_str(
        "variant,fraction,seeds,initial_success_median,success_median,success_q1,success_q3\n",
    );
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.variant,
            row.fraction,
            row.seeds_used,
            row.initial_success_median,
            row.success_median,
            row.success_q1,
            row.success_q3
        ));
    }
    std::fs::write(path, out)
}

fn write_ablation_table(path: &Path, rows: &[AggregateRow]) -> std::io::Result<()> {
    let mut out = String::from("# schema: gdepo.ablation.v1\n");
    out.push_str("variant,das,era,dai,fraction,success_median\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.variant, row.das, row.era, row.dai, row.fraction, row.success_median
        ));
    }
    std::fs::write(path, out)
}

fn write_quality_table(path: &Path, rows: &[AggregateRow]) -> std::io::Result<()> {
    let mut out = String::from("# schema: gdepo.quality.v1\n");
    out.push_str("variant,fraction,success_median,mean_tokens_median,repetition_rate_median\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.variant,
            row.fraction,
            row.success_median,
            row.mean_tokens_median,
            row.repetition_rate_median
        ));
    }
    std::fs::write(path, out)
}
