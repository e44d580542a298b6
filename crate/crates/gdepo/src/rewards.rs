//! Reward computation: the binary correctness label, the two auxiliary
//! rewards (n-gram repetition, sequence length), and weighted composites.
//!
//! Auxiliary rewards are produced raw in `[-1, 1]` and mapped through the
//! affine `(r + 1) / 2` onto `[0, 1]` before any weighted summation. The
//! min-max normalization used downstream is invariant under that shared
//! affine map, so advantages are unaffected by the convention.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

/// Token alphabet used across environments and policies.
pub type Token = u32;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("auxiliary reward has {got} components but config declares {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
}

/// Weights and shape parameters for the reward function.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RewardConfig {
    /// Weight of the binary correctness reward.
    pub alpha: f64,
    /// Weights of the auxiliary rewards; must sum to 1.
    pub aux_weights: Vec<f64>,
    /// N-gram size for the repetition reward.
    pub ngram_n: usize,
    /// Token count at which the length reward reaches -1.
    pub length_horizon: usize,
}

impl Default for RewardConfig {
    /// Correctness and both auxiliary rewards carry equal weight. With the
    /// auxiliary weights constrained to sum to 1 and two auxiliary
    /// components, "equal" pins all three weights at 0.5.
    fn default() -> Self {
        Self {
            alpha: 0.5,
            aux_weights: vec![0.5, 0.5],
            ngram_n: 5,
            length_horizon: 64,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(RewardError::InvalidConfig(format!(
                "alpha must be a finite nonnegative real, got {}",
                self.alpha
            )));
        }
        if self.aux_weights.is_empty() {
            return Err(RewardError::InvalidConfig(
                "aux_weights must be non-empty".into(),
            ));
        }
        if self.aux_weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(RewardError::InvalidConfig(
                "aux_weights must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = self.aux_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(RewardError::InvalidConfig(format!(
                "aux_weights must sum to 1 within 1e-9, got {sum}"
            )));
        }
        if self.ngram_n < 1 {
            return Err(RewardError::InvalidConfig("ngram_n must be >= 1".into()));
        }
        if self.length_horizon < 1 {
            return Err(RewardError::InvalidConfig(
                "length_horizon must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-trajectory auxiliary rewards: raw values in `[-1, 1]` plus their
/// `[0, 1]` images under `(r + 1) / 2`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AuxRewardVector {
    raw: Vec<f64>,
    normalized01: Vec<f64>,
}

impl AuxRewardVector {
    pub fn from_raw(raw: Vec<f64>) -> Result<Self, RewardError> {
        if raw.iter().any(|r| !r.is_finite() || *r < -1.0 || *r > 1.0) {
            return Err(RewardError::InvalidConfig(format!(
                "raw auxiliary rewards must lie in [-1, 1], got {raw:?}"
            )));
        }
        let normalized01 = raw.iter().map(|r| (r + 1.0) / 2.0).collect();
        Ok(Self { raw, normalized01 })
    }

    pub fn dim(&self) -> usize {
        self.raw.len()
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn normalized01(&self) -> &[f64] {
        &self.normalized01
    }
}

/// Binary correctness label: +1 for an accepted trajectory, -1 otherwise.
pub fn correctness_reward(verdict: bool) -> f64 {
    if verdict {
        1.0
    } else {
        -1.0
    }
}

/// Converts a signed-unit label onto the `{0, 1}` alphabet.
pub fn label01(label: f64) -> f64 {
    (label + 1.0) / 2.0
}

/// Fraction of contiguous n-grams that are repeats of an earlier n-gram:
/// `1 - distinct/total`. Zero when fewer than `n` tokens exist.
pub fn repetition_fraction(tokens: &[Token], n: usize) -> f64 {
    assert!(n >= 1, "n-gram size must be >= 1");
    if tokens.len() < n {
        return 0.0;
    }
    let total = tokens.len() - n + 1;
    let distinct: HashSet<&[Token]> = tokens.windows(n).collect();
    1.0 - distinct.len() as f64 / total as f64
}

/// Repetition reward `1 - 2 * repetition_fraction`, in `[-1, 1]`.
///
/// +1 when every n-gram is distinct (and vacuously for sequences shorter
/// than `n`), approaching -1 as all n-grams collapse onto one.
pub fn repetition_reward(tokens: &[Token], n: usize) -> f64 {
    1.0 - 2.0 * repetition_fraction(tokens, n)
}

/// Smooth length reward `cos(pi * min(T, T_max) / T_max)`, in `[-1, 1]`.
///
/// +1 at zero length, -1 at and beyond the horizon, monotone nonincreasing.
pub fn length_reward(length: usize, horizon: usize) -> f64 {
    assert!(horizon >= 1, "length horizon must be >= 1");
    let t = length.min(horizon) as f64;
    (std::f64::consts::PI * t / horizon as f64).cos()
}

/// Weighted sum of the `[0, 1]`-normalized auxiliary rewards; lies in `[0, 1]`.
pub fn weighted_aux_sum(aux: &AuxRewardVector, config: &RewardConfig) -> Result<f64, RewardError> {
    if aux.dim() != config.aux_weights.len() {
        return Err(RewardError::DimensionMismatch {
            expected: config.aux_weights.len(),
            got: aux.dim(),
        });
    }
    Ok(config
        .aux_weights
        .iter()
        .zip(aux.normalized01())
        .map(|(w, r)| w * r)
        .sum())
}

/// Raw weighted composite `alpha * l01 + sum_j w_j * aux01_j` over the
/// `{0, 1}` label alphabet.
pub fn composite_total(
    l01: f64,
    aux01: &[f64],
    config: &RewardConfig,
) -> Result<f64, RewardError> {
    if aux01.len() != config.aux_weights.len() {
        return Err(RewardError::DimensionMismatch {
            expected: config.aux_weights.len(),
            got: aux01.len(),
        });
    }
    let aux: f64 = config
        .aux_weights
        .iter()
        .zip(aux01)
        .map(|(w, r)| w * r)
        .sum();
    Ok(config.alpha * l01 + aux)
}
