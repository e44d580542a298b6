//! Softmax sequence policies with exact analytic gradients, the clipped
//! surrogate objective, and gradient-ascent updates.
//!
//! Both policy families are linear-softmax over per-step observations:
//! the tabular family uses a one-hot observation over a finite state space
//! (so parameters are per-state logits), the linear family uses dense
//! hand-coded features. Everything downstream is shared: the per-token
//! logits are `z_v = sum_f x_f * theta[f, v]`, token probabilities are the
//! softmax of `z`, and the log-probability gradient is the exact
//! `x_f * (1{v = token} - pi_v)`.
//!
//! The surrogate objective for a group of `G` trajectories with per-token
//! policy ratios `rho` and trajectory-constant advantages `A` is
//!
//! ```text
//! (1/G) * sum_i (1/T_i) * sum_t min(rho_{i,t} * A_i, clip(rho_{i,t}) * A_i)
//! ```
//!
//! averaged over groups, with `clip(rho) = min(max(rho, 1 - eps_low), 1 + eps_high)`.
//! The gradient per token is `A_i * grad(rho)` whenever the min selects the
//! unclipped branch (including outside the clip interval on the
//! advantage-unfavorable side) and exactly zero when the clipped branch is
//! active, which caps how far a trajectory's probability can be pushed in
//! its advantage direction across repeated updates.

use crate::advantage::AdvantageVector;
use crate::rewards::Token;
use crate::sampling::Group;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("token {token} out of vocabulary (size {vocab})")]
    UnknownToken { token: Token, vocab: usize },
    #[error("feature index {index} out of range (dimension {dim})")]
    FeatureOutOfRange { index: usize, dim: usize },
    #[error("shape mismatch: {0}")]
    Misaligned(String),
    #[error("invalid clip config: eps_low={eps_low}, eps_high={eps_high}")]
    InvalidClip { eps_low: f64, eps_high: f64 },
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}

/// Policy family tag. Both share the linear-softmax machinery; the tag
/// records how observations were encoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyFamily {
    /// One-hot observations over a finite state space; per-state logits.
    Tabular,
    /// Dense hand-coded state features; feature-weight matrix.
    Linear,
}

/// One generation step's observation: the active (feature index, value)
/// pairs. Tabular steps carry a single one-hot entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Obs {
    pub active: Vec<(usize, f64)>,
}

impl Obs {
    pub fn one_hot(state: usize) -> Self {
        Self {
            active: vec![(state, 1.0)],
        }
    }

    pub fn dense(features: &[f64]) -> Self {
        Self {
            active: features.iter().copied().enumerate().collect(),
        }
    }
}

/// Policy parameters: a feature-by-vocabulary logit matrix stored flat,
/// `theta[f * vocab + v]`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PolicyParams {
    pub family: PolicyFamily,
    pub theta: Vec<f64>,
    pub num_features: usize,
    pub vocab: usize,
}

impl PolicyParams {
    /// Zero-initialized tabular policy: uniform over the vocabulary in
    /// every state.
    pub fn tabular(num_states: usize, vocab: usize) -> Self {
        Self {
            family: PolicyFamily::Tabular,
            theta: vec![0.0; num_states * vocab],
            num_features: num_states,
            vocab,
        }
    }

    /// Zero-initialized linear-feature policy.
    pub fn linear(feature_dim: usize, vocab: usize) -> Self {
        Self {
            family: PolicyFamily::Linear,
            theta: vec![0.0; feature_dim * vocab],
            num_features: feature_dim,
            vocab,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|t| t.is_finite())
    }
}

/// Asymmetric clipping bounds for the policy ratio.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ClipConfig {
    pub eps_low: f64,
    pub eps_high: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            eps_low: 0.2,
            eps_high: 0.28,
        }
    }
}

impl ClipConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(0.0 < self.eps_low && self.eps_low < 1.0) || self.eps_high <= 0.0 {
            return Err(PolicyError::InvalidClip {
                eps_low: self.eps_low,
                eps_high: self.eps_high,
            });
        }
        Ok(())
    }
}

/// How per-token terms are normalized inside one group's objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveNorm {
    /// `(1/G) * sum_i (1/T_i) * sum_t`: every trajectory weighs equally.
    #[default]
    PerTrajectory,
    /// `(1/sum_i T_i) * sum_{i,t}`: every token weighs equally.
    GlobalTokens,
}

/// Logits for one observation: `z_v = sum_f x_f * theta[f, v]`.
pub fn logits(params: &PolicyParams, obs: &Obs) -> Result<Vec<f64>, PolicyError> {
    let mut z = vec![0.0; params.vocab];
    for &(f, x) in &obs.active {
        if f >= params.num_features {
            return Err(PolicyError::FeatureOutOfRange {
                index: f,
                dim: params.num_features,
            });
        }
        let row = &params.theta[f * params.vocab..(f + 1) * params.vocab];
        for (zv, w) in z.iter_mut().zip(row) {
            *zv += x * w;
        }
    }
    Ok(z)
}

/// Max-subtracted log-softmax.
pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_norm = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    z.iter().map(|v| v - log_norm).collect()
}

/// Per-token log-probabilities of a token sequence under the policy.
pub fn token_logprobs(
    params: &PolicyParams,
    obs: &[Obs],
    tokens: &[Token],
) -> Result<Vec<f64>, PolicyError> {
    if obs.len() != tokens.len() {
        return Err(PolicyError::Misaligned(format!(
            "{} observations vs {} tokens",
            obs.len(),
            tokens.len()
        )));
    }
    let mut out = Vec::with_capacity(tokens.len());
    for (step, &token) in obs.iter().zip(tokens) {
        if token as usize >= params.vocab {
            return Err(PolicyError::UnknownToken {
                token,
                vocab: params.vocab,
            });
        }
        let lp = log_softmax(&logits(params, step)?);
        out.push(lp[token as usize]);
    }
    Ok(out)
}

/// Per-token policy ratios `exp(logpi_new - logpi_old)` for every trajectory
/// in a group, against the old log-probabilities frozen at sampling time.
pub fn ratios(params: &PolicyParams, group: &Group) -> Result<Vec<Vec<f64>>, PolicyError> {
    group
        .trajectories
        .iter()
        .map(|traj| {
            let new_lp = token_logprobs(params, &traj.obs, &traj.tokens)?;
            Ok(new_lp
                .iter()
                .zip(&traj.old_logprobs)
                .map(|(n, o)| (n - o).exp())
                .collect())
        })
        .collect()
}

/// `min(max(rho, 1 - eps_low), 1 + eps_high)`.
pub fn clip_ratio(rho: f64, cfg: &ClipConfig) -> f64 {
    rho.max(1.0 - cfg.eps_low).min(1.0 + cfg.eps_high)
}

fn check_alignment(groups: &[Group], advantages: &[AdvantageVector]) -> Result<(), PolicyError> {
    if groups.len() != advantages.len() {
        return Err(PolicyError::Misaligned(format!(
            "{} groups vs {} advantage vectors",
            groups.len(),
            advantages.len()
        )));
    }
    for (group, adv) in groups.iter().zip(advantages) {
        if group.trajectories.len() != adv.values.len() {
            return Err(PolicyError::Misaligned(format!(
                "group of {} trajectories vs {} advantages",
                group.trajectories.len(),
                adv.values.len()
            )));
        }
    }
    Ok(())
}

/// Clipped surrogate objective, averaged over groups.
pub fn surrogate_objective(
    params: &PolicyParams,
    groups: &[Group],
    advantages: &[AdvantageVector],
    clip: &ClipConfig,
    norm: ObjectiveNorm,
) -> Result<f64, PolicyError> {
    clip.validate()?;
    check_alignment(groups, advantages)?;
    let mut total = 0.0;
    for (group, adv) in groups.iter().zip(advantages) {
        let rho = ratios(params, group)?;
        let token_count: usize = group.trajectories.iter().map(|t| t.tokens.len()).sum();
        let g = group.trajectories.len() as f64;
        let mut group_term = 0.0;
        for (traj_rho, &a) in rho.iter().zip(&adv.values) {
            let weight = match norm {
                ObjectiveNorm::PerTrajectory => 1.0 / (g * traj_rho.len() as f64),
                ObjectiveNorm::GlobalTokens => 1.0 / token_count as f64,
            };
            for &r in traj_rho {
                if !r.is_finite() {
                    return Err(PolicyError::NonFinite(format!("policy ratio {r}")));
                }
                group_term += weight * (r * a).min(clip_ratio(r, clip) * a);
            }
        }
        total += group_term;
    }
    Ok(total / groups.len().max(1) as f64)
}

/// Whether the min in the surrogate selects the unclipped branch for this
/// (ratio, advantage) pair. Boundary ties count as unclipped, so the
/// gradient flows there.
fn unclipped_branch_active(rho: f64, advantage: f64, clip: &ClipConfig) -> bool {
    if advantage > 0.0 {
        rho <= 1.0 + clip.eps_high
    } else if advantage < 0.0 {
        rho >= 1.0 - clip.eps_low
    } else {
        false
    }
}

/// Exact gradient of [`surrogate_objective`] with respect to `theta`.
///
/// Per token the contribution is `A * grad(rho)` with
/// `grad(rho) = rho * grad(logpi)` when the unclipped branch is selected,
/// and exactly zero when the clipped branch is active.
pub fn objective_gradient(
    params: &PolicyParams,
    groups: &[Group],
    advantages: &[AdvantageVector],
    clip: &ClipConfig,
    norm: ObjectiveNorm,
) -> Result<Vec<f64>, PolicyError> {
    clip.validate()?;
    check_alignment(groups, advantages)?;
    let mut grad = vec![0.0; params.dim()];
    let group_weight = 1.0 / groups.len().max(1) as f64;
    for (group, adv) in groups.iter().zip(advantages) {
        let token_count: usize = group.trajectories.iter().map(|t| t.tokens.len()).sum();
        let g = group.trajectories.len() as f64;
        for (traj, &a) in group.trajectories.iter().zip(&adv.values) {
            if a == 0.0 {
                continue;
            }
            let weight = group_weight
                * match norm {
                    ObjectiveNorm::PerTrajectory => 1.0 / (g * traj.tokens.len() as f64),
                    ObjectiveNorm::GlobalTokens => 1.0 / token_count as f64,
                };
            for ((step, &token), &old_lp) in
                traj.obs.iter().zip(&traj.tokens).zip(&traj.old_logprobs)
            {
                if token as usize >= params.vocab {
                    return Err(PolicyError::UnknownToken {
                        token,
                        vocab: params.vocab,
                    });
                }
                let z = logits(params, step)?;
                let lp = log_softmax(&z);
                let rho = (lp[token as usize] - old_lp).exp();
                if !rho.is_finite() {
                    return Err(PolicyError::NonFinite(format!("policy ratio {rho}")));
                }
                if !unclipped_branch_active(rho, a, clip) {
                    continue;
                }
                let coeff = weight * a * rho;
                for &(f, x) in &step.active {
                    let row = f * params.vocab;
                    for v in 0..params.vocab {
                        let indicator = if v == token as usize { 1.0 } else { 0.0 };
                        grad[row + v] += coeff * x * (indicator - (lp[v]).exp());
                    }
                }
            }
        }
    }
    Ok(grad)
}

/// One gradient-ascent step `theta <- theta + lr * gradient`.
pub fn ascent_step(
    params: &PolicyParams,
    gradient: &[f64],
    lr: f64,
) -> Result<PolicyParams, PolicyError> {
    if gradient.len() != params.dim() {
        return Err(PolicyError::Misaligned(format!(
            "gradient of dim {} vs parameters of dim {}",
            gradient.len(),
            params.dim()
        )));
    }
    if gradient.iter().any(|g| !g.is_finite()) || !lr.is_finite() || lr < 0.0 {
        return Err(PolicyError::NonFinite(format!(
            "gradient or learning rate not finite (lr = {lr})"
        )));
    }
    let mut next = params.clone();
    for (t, g) in next.theta.iter_mut().zip(gradient) {
        *t += lr * g;
    }
    Ok(next)
}

/// Parameter update strategies. Plain ascent is the default; the moment
/// variant mirrors AdamW with linear warmup into a cosine decay schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Optimizer {
    Sgd,
    AdamCosine(AdamCosine),
}

impl Optimizer {
    pub fn apply(
        &mut self,
        params: &PolicyParams,
        gradient: &[f64],
        base_lr: f64,
    ) -> Result<PolicyParams, PolicyError> {
        match self {
            Optimizer::Sgd => ascent_step(params, gradient, base_lr),
            Optimizer::AdamCosine(state) => state.step(params, gradient, base_lr),
        }
    }
}

/// First/second-moment ascent with warmup and cosine decay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamCosine {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
    pub total_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_ratio: f64,
    pub min_lr_frac: f64,
}

impl AdamCosine {
    pub fn new(dim: usize, total_steps: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
            total_steps: total_steps.max(1),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_ratio: 0.1,
            min_lr_frac: 0.0,
        }
    }

    /// Learning-rate multiplier at the current step: linear warmup over the
    /// first `warmup_ratio` of steps, then cosine decay to `min_lr_frac`.
    pub fn schedule(&self) -> f64 {
        let warmup_steps = (self.total_steps as f64 * self.warmup_ratio).ceil().max(1.0);
        let step = self.step as f64;
        if step < warmup_steps {
            (step + 1.0) / warmup_steps
        } else {
            let span = (self.total_steps as f64 - warmup_steps).max(1.0);
            let progress = ((step - warmup_steps) / span).min(1.0);
            let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
            self.min_lr_frac + (1.0 - self.min_lr_frac) * cosine
        }
    }

    pub fn step(
        &mut self,
        params: &PolicyParams,
        gradient: &[f64],
        base_lr: f64,
    ) -> Result<PolicyParams, PolicyError> {
        if gradient.len() != params.dim() || gradient.len() != self.m.len() {
            return Err(PolicyError::Misaligned(format!(
                "gradient of dim {} vs optimizer state of dim {}",
                gradient.len(),
                self.m.len()
            )));
        }
        if gradient.iter().any(|g| !g.is_finite()) {
            return Err(PolicyError::NonFinite("gradient".into()));
        }
        let lr = base_lr * self.schedule();
        self.step += 1;
        let bias1 = 1.0 - self.beta1.powi(self.step as i32);
        let bias2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut next = params.clone();
        for (((theta, g), m), v) in next
            .theta
            .iter_mut()
            .zip(gradient)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *theta += lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(next)
    }
}
