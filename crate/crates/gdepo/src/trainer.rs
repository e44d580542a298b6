//! The training loop: per-query sampling (dynamic in exploratory modes),
//! per-mode advantage computation, policy updates with dynamic additional
//! iterations, and metrics.
//!
//! Three modes share one loop. `grpo_binary` normalizes the signed
//! correctness labels within each group — an all-incorrect group therefore
//! yields zero advantages and the update is a no-op. `grpo_composite`
//! normalizes the weighted composite totals instead. `gdepo` uses the
//! equal-right advantage (sign from the verifier, magnitude from the
//! auxiliary scores, GRPO fallback above the pass-rate threshold) and pairs
//! it with dynamic additional sampling and dynamic additional iterations:
//! a group that found its first success only after resampling is updated
//! `m` times instead of once, each time against the log-probabilities
//! frozen when the group was sampled.

use crate::advantage::{
    equal_right_advantage, grpo_advantage, pass_rate, AdvantageError, AdvantageRule,
    AdvantageVector,
};
use crate::envs::{EnvError, PolicySpace, TaskSpec};
use crate::metrics::{EvalPoint, RunMetrics, StepRecord};
use crate::policy::{
    objective_gradient, surrogate_objective, AdamCosine, ClipConfig, ObjectiveNorm, Optimizer,
    PolicyFamily, PolicyParams,
};
use crate::rewards::{composite_total, label01, weighted_aux_sum, RewardConfig, RewardError};
use crate::rng::derive_seed;
use crate::sampling::{dynamic_additional_sampling, rollout_group, Group, SamplingError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

// Seed-stream tags.
const TAG_SAMPLE: u64 = 1;
const TAG_SHUFFLE: u64 = 2;
const TAG_EVAL: u64 = 3;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Advantage(#[from] AdvantageError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("numerical failure: {detail}; parameters rolled back to last good step")]
    Numerical {
        detail: String,
        last_good: Box<PolicyParams>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    GrpoBinary,
    GrpoComposite,
    Gdepo,
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainMode::GrpoBinary => write!(f, "grpo_binary"),
            TrainMode::GrpoComposite => write!(f, "grpo_composite"),
            TrainMode::Gdepo => write!(f, "gdepo"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    AdamCosine,
}

/// Full training configuration. The serde defaults make partial config
/// files valid.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub family: PolicyFamily,
    /// Group size G.
    pub group_size: usize,
    /// Sampling-round budget n (1 disables dynamic additional sampling).
    pub max_rounds: usize,
    /// Update iterations m for resampled successful groups (1 disables
    /// dynamic additional iterations).
    pub extra_iters: usize,
    /// Pass-rate threshold gating the equal-right rule.
    pub tau: f64,
    pub clip: ClipConfig,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub reward: RewardConfig,
    pub seed: u64,
    pub objective_norm: ObjectiveNorm,
    /// Include the correctness term in the scores the GRPO fallback
    /// normalizes (the equal-right magnitude always uses auxiliary scores
    /// only).
    pub fallback_includes_correctness: bool,
    /// Accumulate gradients over a batch and take one step per batch
    /// instead of stepping per group. Requires extra_iters = 1.
    pub batch_accumulate: bool,
    /// Rollouts per held-out task at evaluation points.
    pub eval_samples: usize,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Gdepo,
            family: PolicyFamily::Tabular,
            group_size: 8,
            max_rounds: 3,
            extra_iters: 2,
            tau: 0.5,
            clip: ClipConfig::default(),
            lr: 1e-2,
            epochs: 2,
            batch_size: 32,
            reward: RewardConfig::default(),
            seed: 0,
            objective_norm: ObjectiveNorm::PerTrajectory,
            fallback_includes_correctness: false,
            batch_accumulate: false,
            eval_samples: 16,
            optimizer: OptimizerKind::Sgd,
        }
    }
}

impl TrainConfig {
    /// Defaults for one mode: the baselines sample a single round and take
    /// a single step per group.
    pub fn for_mode(mode: TrainMode) -> Self {
        let exploratory = mode == TrainMode::Gdepo;
        Self {
            mode,
            max_rounds: if exploratory { 3 } else { 1 },
            extra_iters: if exploratory { 2 } else { 1 },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.group_size < 2 {
            return Err(TrainError::InvalidConfig("group_size must be >= 2".into()));
        }
        if self.max_rounds < 1 {
            return Err(TrainError::InvalidConfig("max_rounds must be >= 1".into()));
        }
        if self.extra_iters < 1 {
            return Err(TrainError::InvalidConfig("extra_iters must be >= 1".into()));
        }
        if !(0.0 < self.tau && self.tau < 1.0) {
            return Err(TrainError::InvalidConfig(format!(
                "tau must lie in (0, 1), got {}",
                self.tau
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::InvalidConfig(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(TrainError::InvalidConfig(
                "epochs and batch_size must be >= 1".into(),
            ));
        }
        if self.eval_samples < 2 {
            return Err(TrainError::InvalidConfig(
                "eval_samples must be >= 2".into(),
            ));
        }
        if self.batch_accumulate && self.extra_iters > 1 {
            return Err(TrainError::InvalidConfig(
                "batch accumulation steps once per batch; extra_iters must be 1".into(),
            ));
        }
        self.reward
            .validate()
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        self.clip
            .validate()
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        Ok(())
    }
}

/// Advantage vector for a sampled group under the configured mode.
pub fn advantages_for_mode(group: &Group, cfg: &TrainConfig) -> Result<AdvantageVector, TrainError> {
    let labels = group.labels();
    let c_q = pass_rate(&labels);
    match cfg.mode {
        TrainMode::GrpoBinary => Ok(AdvantageVector {
            values: grpo_advantage(&labels)?,
            rule: AdvantageRule::GrpoStandard,
            pass_rate: c_q,
            threshold: cfg.tau,
        }),
        TrainMode::GrpoComposite => {
            let scores = composite_scores(group, &cfg.reward)?;
            Ok(AdvantageVector {
                values: grpo_advantage(&scores)?,
                rule: AdvantageRule::GrpoStandard,
                pass_rate: c_q,
                threshold: cfg.tau,
            })
        }
        TrainMode::Gdepo => {
            if c_q > cfg.tau && cfg.fallback_includes_correctness {
                let scores = composite_scores(group, &cfg.reward)?;
                return Ok(AdvantageVector {
                    values: grpo_advantage(&scores)?,
                    rule: AdvantageRule::GrpoFallback,
                    pass_rate: c_q,
                    threshold: cfg.tau,
                });
            }
            let scores: Vec<f64> = group
                .trajectories
                .iter()
                .map(|t| weighted_aux_sum(&t.aux, &cfg.reward))
                .collect::<Result<_, _>>()?;
            Ok(equal_right_advantage(&labels, &scores, c_q, cfg.tau)?)
        }
    }
}

fn composite_scores(group: &Group, reward: &RewardConfig) -> Result<Vec<f64>, RewardError> {
    group
        .trajectories
        .iter()
        .map(|t| composite_total(label01(t.label), t.aux.normalized01(), reward))
        .collect()
}

/// How many update iterations this group receives: `m` for groups that
/// found a success only through resampling, 1 otherwise.
pub fn iterations_for_group(group: &Group, cfg: &TrainConfig) -> usize {
    if cfg.extra_iters > 1 && group.has_success && group.rounds_used > 1 {
        cfg.extra_iters
    } else {
        1
    }
}

/// Applies this group's update iterations, recording one step record per
/// iteration. Ratios are recomputed each iteration against the
/// log-probabilities frozen at sampling time.
#[allow(clippy::too_many_arguments)]
pub fn update_for_group(
    group: &Group,
    advantages: &AdvantageVector,
    params: &PolicyParams,
    optimizer: &mut Optimizer,
    cfg: &TrainConfig,
    epoch: usize,
    batch: usize,
    metrics: &mut RunMetrics,
) -> Result<PolicyParams, TrainError> {
    let iterations = iterations_for_group(group, cfg);
    let mut current = params.clone();
    for iteration in 1..=iterations {
        let groups = std::slice::from_ref(group);
        let advs = std::slice::from_ref(advantages);
        let objective =
            surrogate_objective(&current, groups, advs, &cfg.clip, cfg.objective_norm)
                .map_err(|e| numerical(e.to_string(), &current))?;
        let gradient = objective_gradient(&current, groups, advs, &cfg.clip, cfg.objective_norm)
            .map_err(|e| numerical(e.to_string(), &current))?;
        let next = optimizer
            .apply(&current, &gradient, cfg.lr)
            .map_err(|e| numerical(e.to_string(), &current))?;
        metrics.push_step(StepRecord {
            epoch,
            batch,
            query_id: Some(group.query_id),
            rounds_used: group.rounds_used,
            has_success: group.has_success,
            pass_rate: advantages.pass_rate,
            rule: advantages.rule,
            iteration,
            iterations_total: iterations,
            objective,
            discarded_trajectories: group.discarded_trajectories,
        });
        current = next;
    }
    Ok(current)
}

fn numerical(detail: String, last_good: &PolicyParams) -> TrainError {
    TrainError::Numerical {
        detail,
        last_good: Box::new(last_good.clone()),
    }
}

/// Held-out evaluation statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub success_rate: f64,
    pub mean_tokens: f64,
    pub repetition_rate: f64,
}

/// Samples `eval_samples` trajectories per task and reports the mean
/// per-trajectory success, token count, and n-gram repetition fraction.
pub fn evaluate(
    params: &PolicyParams,
    space: &PolicySpace,
    tasks: &[TaskSpec],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<EvalStats, TrainError> {
    let mut successes = 0usize;
    let mut total = 0usize;
    let mut tokens = 0usize;
    let mut repetition = 0.0f64;
    for (idx, task) in tasks.iter().enumerate() {
        let trajectories = rollout_group(
            params,
            space,
            task,
            cfg.eval_samples,
            &cfg.reward,
            derive_seed(seed, &[idx as u64]),
        )?;
        for t in &trajectories {
            total += 1;
            successes += t.is_correct() as usize;
            tokens += t.tokens.len();
            repetition += crate::rewards::repetition_fraction(&t.tokens, cfg.reward.ngram_n);
        }
    }
    if total == 0 {
        return Err(TrainError::InvalidConfig("no held-out tasks".into()));
    }
    Ok(EvalStats {
        success_rate: successes as f64 / total as f64,
        mean_tokens: tokens as f64 / total as f64,
        repetition_rate: repetition / total as f64,
    })
}

/// A trained policy with the observation space it was trained in.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SavedPolicy {
    pub space: PolicySpace,
    pub params: PolicyParams,
}

/// The outcome of one training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub metrics: RunMetrics,
    pub params: PolicyParams,
    pub space: PolicySpace,
}

/// Runs the full training loop over the task list, evaluating on the
/// held-out tasks before training and after every epoch. Fully
/// reproducible: identical config and seed give identical metrics and
/// parameters.
pub fn train(
    cfg: &TrainConfig,
    tasks: &[TaskSpec],
    holdout: &[TaskSpec],
) -> Result<TrainRun, TrainError> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(TrainError::InvalidConfig("task list is empty".into()));
    }
    if holdout.is_empty() {
        return Err(TrainError::InvalidConfig("held-out task list is empty".into()));
    }
    let mut all = tasks.to_vec();
    all.extend_from_slice(holdout);
    let space = PolicySpace::for_tasks(&all)?;
    let mut params = space.initial_params(cfg.family);

    let planned_steps = cfg.epochs * tasks.len() * cfg.extra_iters;
    let mut optimizer = match cfg.optimizer {
        OptimizerKind::Sgd => Optimizer::Sgd,
        OptimizerKind::AdamCosine => {
            Optimizer::AdamCosine(AdamCosine::new(params.dim(), planned_steps))
        }
    };

    let mut metrics = RunMetrics::new(cfg.mode.to_string());
    let mut rounds_histogram = vec![0usize; cfg.max_rounds];

    let initial = evaluate(&params, &space, holdout, cfg, derive_seed(cfg.seed, &[TAG_EVAL, 0]))?;
    metrics.push_eval(EvalPoint {
        step: 0,
        epoch: 0,
        success_rate: initial.success_rate,
        mean_tokens: initial.mean_tokens,
        repetition_rate: initial.repetition_rate,
        rounds_histogram: rounds_histogram.clone(),
    });

    for epoch in 1..=cfg.epochs {
        let order = shuffled_indices(tasks.len(), derive_seed(cfg.seed, &[TAG_SHUFFLE, epoch as u64]));
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut batch_gradient = vec![0.0; params.dim()];
            let mut batch_objective = 0.0;
            let mut batch_groups = 0usize;
            for (qi, &task_idx) in chunk.iter().enumerate() {
                let task = &tasks[task_idx];
                let group = dynamic_additional_sampling(
                    &params,
                    &space,
                    task,
                    cfg.group_size,
                    cfg.max_rounds,
                    &cfg.reward,
                    derive_seed(cfg.seed, &[TAG_SAMPLE, epoch as u64, batch as u64, qi as u64]),
                )?;
                rounds_histogram[group.rounds_used - 1] += 1;
                let advantages = advantages_for_mode(&group, cfg)?;
                if cfg.batch_accumulate {
                    let groups = std::slice::from_ref(&group);
                    let advs = std::slice::from_ref(&advantages);
                    batch_objective +=
                        surrogate_objective(&params, groups, advs, &cfg.clip, cfg.objective_norm)
                            .map_err(|e| numerical(e.to_string(), &params))?;
                    let g =
                        objective_gradient(&params, groups, advs, &cfg.clip, cfg.objective_norm)
                            .map_err(|e| numerical(e.to_string(), &params))?;
                    for (acc, v) in batch_gradient.iter_mut().zip(&g) {
                        *acc += v;
                    }
                    batch_groups += 1;
                } else {
                    params = update_for_group(
                        &group,
                        &advantages,
                        &params,
                        &mut optimizer,
                        cfg,
                        epoch,
                        batch,
                        &mut metrics,
                    )?;
                }
            }
            if cfg.batch_accumulate && batch_groups > 0 {
                let scale = 1.0 / batch_groups as f64;
                batch_gradient.iter_mut().for_each(|g| *g *= scale);
                params = optimizer
                    .apply(&params, &batch_gradient, cfg.lr)
                    .map_err(|e| numerical(e.to_string(), &params))?;
                metrics.push_step(StepRecord {
                    epoch,
                    batch,
                    query_id: None,
                    rounds_used: 1,
                    has_success: false,
                    pass_rate: 0.0,
                    rule: AdvantageRule::GrpoStandard,
                    iteration: 1,
                    iterations_total: 1,
                    objective: batch_objective * scale,
                    discarded_trajectories: 0,
                });
            }
        }
        let stats = evaluate(
            &params,
            &space,
            holdout,
            cfg,
            derive_seed(cfg.seed, &[TAG_EVAL, epoch as u64]),
        )?;
        metrics.push_eval(EvalPoint {
            step: metrics.total_ascent_steps(),
            epoch,
            success_rate: stats.success_rate,
            mean_tokens: stats.mean_tokens,
            repetition_rate: stats.repetition_rate,
            rounds_histogram: std::mem::replace(&mut rounds_histogram, vec![0; cfg.max_rounds]),
        });
    }

    Ok(TrainRun {
        metrics,
        params,
        space,
    })
}

fn shuffled_indices(len: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut crate::rng::stream_rng(seed, &[]));
    order
}
