//! Group rollouts and dynamic additional sampling.
//!
//! A group is the unit of advantage normalization: `G` trajectories sampled
//! i.i.d. from the policy for one query. Dynamic additional sampling rolls
//! a query's group again — up to `n` rounds — while no trajectory verifies,
//! keeping only the last round. Early rounds that produced no success are
//! counted but never reach the update path.

use crate::envs::{self, EnvError, PolicySpace, TaskSpec};
use crate::policy::{log_softmax, logits, Obs, PolicyError, PolicyParams};
use crate::rewards::{
    correctness_reward, length_reward, repetition_reward, AuxRewardVector, RewardConfig,
    RewardError, Token,
};
use crate::rng::{derive_seed, stream_rng};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("group size must be >= 2, got {0}")]
    GroupTooSmall(usize),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid group: {0}")]
    InvalidGroup(String),
}

/// One sampled output: tokens, the observations and old-policy
/// log-probabilities recorded at sampling time, the verifier label, and the
/// auxiliary rewards.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub tokens: Vec<Token>,
    pub obs: Vec<Obs>,
    pub old_logprobs: Vec<f64>,
    pub label: f64,
    pub aux: AuxRewardVector,
}

impl Trajectory {
    pub fn new(
        tokens: Vec<Token>,
        obs: Vec<Obs>,
        old_logprobs: Vec<f64>,
        label: f64,
        aux: AuxRewardVector,
    ) -> Result<Self, SamplingError> {
        if tokens.is_empty() {
            return Err(SamplingError::InvalidTrajectory(
                "token sequence must be non-empty".into(),
            ));
        }
        if tokens.len() != old_logprobs.len() || tokens.len() != obs.len() {
            return Err(SamplingError::InvalidTrajectory(format!(
                "lengths disagree: {} tokens, {} observations, {} logprobs",
                tokens.len(),
                obs.len(),
                old_logprobs.len()
            )));
        }
        if old_logprobs.iter().any(|lp| !lp.is_finite() || *lp > 0.0) {
            return Err(SamplingError::InvalidTrajectory(
                "log-probabilities must be finite and <= 0".into(),
            ));
        }
        if label != 1.0 && label != -1.0 {
            return Err(SamplingError::InvalidTrajectory(format!(
                "label must be +1 or -1, got {label}"
            )));
        }
        Ok(Self {
            tokens,
            obs,
            old_logprobs,
            label,
            aux,
        })
    }

    pub fn is_correct(&self) -> bool {
        self.label == 1.0
    }
}

/// The trajectories kept for one query, with the sampling-round ledger.
#[derive(Debug, Clone)]
pub struct Group {
    pub query_id: u64,
    pub trajectories: Vec<Trajectory>,
    /// Number of sampling rounds actually performed (1..=max_rounds).
    pub rounds_used: usize,
    /// The round budget the group was sampled under.
    pub max_rounds: usize,
    pub has_success: bool,
    /// Trajectories sampled in earlier rounds and dropped; they never reach
    /// the update path.
    pub discarded_trajectories: usize,
}

impl Group {
    pub fn from_parts(
        query_id: u64,
        trajectories: Vec<Trajectory>,
        rounds_used: usize,
        max_rounds: usize,
    ) -> Result<Self, SamplingError> {
        if trajectories.is_empty() {
            return Err(SamplingError::InvalidGroup("empty group".into()));
        }
        if rounds_used == 0 || rounds_used > max_rounds {
            return Err(SamplingError::InvalidGroup(format!(
                "rounds_used {rounds_used} outside 1..={max_rounds}"
            )));
        }
        let has_success = trajectories.iter().any(Trajectory::is_correct);
        if rounds_used < max_rounds && !has_success {
            return Err(SamplingError::InvalidGroup(
                "early termination without a success".into(),
            ));
        }
        let discarded_trajectories = (rounds_used - 1) * trajectories.len();
        Ok(Self {
            query_id,
            trajectories,
            rounds_used,
            max_rounds,
            has_success,
            discarded_trajectories,
        })
    }

    pub fn size(&self) -> usize {
        self.trajectories.len()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.label).collect()
    }

    pub fn pass_rate(&self) -> f64 {
        crate::advantage::pass_rate(&self.labels())
    }

    pub fn mean_tokens(&self) -> f64 {
        self.trajectories.iter().map(|t| t.tokens.len()).sum::<usize>() as f64
            / self.size() as f64
    }
}

fn sample_trajectory<R: Rng>(
    params: &PolicyParams,
    space: &PolicySpace,
    task: &TaskSpec,
    reward: &RewardConfig,
    rng: &mut R,
) -> Result<Trajectory, SamplingError> {
    let mut cursor = task.start_cursor();
    let mut tokens = Vec::with_capacity(task.max_len);
    let mut obs = Vec::with_capacity(task.max_len);
    let mut old_logprobs = Vec::with_capacity(task.max_len);
    while !task.episode_over(&cursor) {
        let step_obs = envs::observe(task, space, &cursor, params.family);
        let lp = log_softmax(&logits(params, &step_obs)?);
        let u: f64 = rng.random();
        let mut cumulative = 0.0;
        let mut token = lp.len() - 1;
        for (v, l) in lp.iter().enumerate() {
            cumulative += l.exp();
            if u < cumulative {
                token = v;
                break;
            }
        }
        tokens.push(token as Token);
        old_logprobs.push(lp[token].min(0.0));
        obs.push(step_obs);
        task.advance(&mut cursor, token as Token);
    }
    let label = correctness_reward(envs::verify(task, &tokens));
    let aux = AuxRewardVector::from_raw(vec![
        repetition_reward(&tokens, reward.ngram_n),
        length_reward(tokens.len(), reward.length_horizon),
    ])?;
    Trajectory::new(tokens, obs, old_logprobs, label, aux)
}

/// Samples `g` trajectories i.i.d. from the policy for one query.
/// Deterministic given (params, task, seed).
pub fn rollout_group(
    params: &PolicyParams,
    space: &PolicySpace,
    task: &TaskSpec,
    g: usize,
    reward: &RewardConfig,
    seed: u64,
) -> Result<Vec<Trajectory>, SamplingError> {
    if g < 2 {
        return Err(SamplingError::GroupTooSmall(g));
    }
    space.admits(task)?;
    let mut rng = stream_rng(seed, &[task.id]);
    (0..g)
        .map(|_| sample_trajectory(params, space, task, reward, &mut rng))
        .collect()
}

/// Rolls out up to `n` rounds for the query, stopping after the first round
/// that contains a verified trajectory, and returns the last round's group.
pub fn dynamic_additional_sampling(
    params: &PolicyParams,
    space: &PolicySpace,
    task: &TaskSpec,
    g: usize,
    n: usize,
    reward: &RewardConfig,
    seed: u64,
) -> Result<Group, SamplingError> {
    if n < 1 {
        return Err(SamplingError::InvalidGroup(
            "round budget must be >= 1".into(),
        ));
    }
    for round in 1..=n {
        let trajectories = rollout_group(
            params,
            space,
            task,
            g,
            reward,
            derive_seed(seed, &[round as u64]),
        )?;
        let success = trajectories.iter().any(Trajectory::is_correct);
        if success || round == n {
            return Group::from_parts(task.id, trajectories, round, n);
        }
    }
    unreachable!("loop returns on the final round")
}
