//! Composite-reward advantage analysis.
//!
//! Under plain GRPO with a composite reward
//! `s_i = alpha * l_i + sum_j w_j * r_{i,j}` (labels in `{0, 1}`,
//! auxiliary rewards in `[0, 1]`), the
//! advantage of trajectory `i` is `(s_i - mu_s) / sigma_s`, so its sign is
//! decided purely by `s_i` against the group mean. A verified-correct
//! trajectory with poor auxiliary rewards can therefore land below the
//! mean and be actively suppressed. This module computes those
//! advantages, verifies the group-mean decomposition
//!
//! ```text
//! mu_s = alpha * p + p * rbar_1 + (1 - p) * rbar_0
//! ```
//!
//! exactly, evaluates the mean-based sign condition `mu_{s,1} < mu_s`, and
//! searches for concrete counterexample groups on which the equal-right
//! rule restores a nonnegative advantage for the suppressed trajectory.
//!
//! One honesty note, enforced in code: the mean-based condition is
//! equivalent to "some correct trajectory has negative advantage" only when
//! the correct subset cannot straddle the group mean — one correct
//! trajectory, or correct trajectories with equal totals. With two or more
//! correct trajectories of unequal totals the condition can miss an
//! existing negative (the class mean sits above `mu_s` while the class
//! minimum sits below). [`negative_advantage_exists`] cross-checks every
//! call against the direct per-trajectory test and reports the disagreement
//! as an error instead of returning a wrong boolean; the counterexample
//! search samples single-correct groups, where the equivalence is exact.

use crate::advantage::{equal_right_advantage, AdvantageRule};
use crate::rng::stream_rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("invalid analysis group: {0}")]
    InvalidGroup(String),
    #[error("degenerate group: all totals equal, advantage undefined")]
    DegenerateGroup,
    #[error("group has no correct trajectory")]
    NoCorrectTrajectory,
    #[error(
        "mean condition (mu_s1 = {mu_s1} vs mu_s = {mu_s}) disagrees with the direct \
         per-trajectory check; the correct subset straddles the group mean"
    )]
    SignConditionMismatch { mu_s1: f64, mu_s: f64 },
}

/// One group under the `{0, 1}` label convention, with the composite-reward
/// weighting attached.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisGroup {
    pub labels01: Vec<f64>,
    /// G x K auxiliary rewards in `[0, 1]`.
    pub aux01: Vec<Vec<f64>>,
    pub alpha: f64,
    pub weights: Vec<f64>,
}

impl AnalysisGroup {
    pub fn new(
        labels01: Vec<f64>,
        aux01: Vec<Vec<f64>>,
        alpha: f64,
        weights: Vec<f64>,
    ) -> Result<Self, AnalysisError> {
        if labels01.len() < 2 {
            return Err(AnalysisError::InvalidGroup(
                "need at least 2 trajectories".into(),
            ));
        }
        if labels01.len() != aux01.len() {
            return Err(AnalysisError::InvalidGroup(format!(
                "{} labels vs {} auxiliary rows",
                labels01.len(),
                aux01.len()
            )));
        }
        if labels01.iter().any(|l| *l != 0.0 && *l != 1.0) {
            return Err(AnalysisError::InvalidGroup("labels must be 0 or 1".into()));
        }
        if alpha <= 0.0 || alpha.is_nan() {
            return Err(AnalysisError::InvalidGroup(
                "correctness weight must be positive".into(),
            ));
        }
        let wsum: f64 = weights.iter().sum();
        if weights.is_empty() || weights.iter().any(|w| *w <= 0.0) || (wsum - 1.0).abs() > 1e-9 {
            return Err(AnalysisError::InvalidGroup(
                "auxiliary weights must be positive and sum to 1".into(),
            ));
        }
        for row in &aux01 {
            if row.len() != weights.len() {
                return Err(AnalysisError::InvalidGroup(format!(
                    "auxiliary row of dim {} vs {} weights",
                    row.len(),
                    weights.len()
                )));
            }
            if row.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return Err(AnalysisError::InvalidGroup(
                    "auxiliary rewards must lie in [0, 1]".into(),
                ));
            }
        }
        Ok(Self {
            labels01,
            aux01,
            alpha,
            weights,
        })
    }

    pub fn size(&self) -> usize {
        self.labels01.len()
    }

    /// Weighted auxiliary sum per trajectory.
    pub fn aux_sums(&self) -> Vec<f64> {
        self.aux01
            .iter()
            .map(|row| row.iter().zip(&self.weights).map(|(r, w)| r * w).sum())
            .collect()
    }

    /// Composite totals `s_i = alpha * l_i + sum_j w_j r_{i,j}`.
    pub fn totals(&self) -> Vec<f64> {
        self.labels01
            .iter()
            .zip(self.aux_sums())
            .map(|(l, aux)| self.alpha * l + aux)
            .collect()
    }

    pub fn mean_total(&self) -> f64 {
        let s = self.totals();
        s.iter().sum::<f64>() / s.len() as f64
    }

    /// Sample standard deviation (1/(G-1)) of the totals.
    pub fn sample_std(&self) -> f64 {
        let s = self.totals();
        let mean = self.mean_total();
        (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (s.len() - 1) as f64).sqrt()
    }

    pub fn pass_fraction(&self) -> f64 {
        self.labels01.iter().sum::<f64>() / self.size() as f64
    }

    /// Weighted mean auxiliary sum over one label class; 0 when the class
    /// is empty (its coefficient in the decomposition is then 0 as well).
    fn class_aux_mean(&self, label: f64) -> f64 {
        let sums = self.aux_sums();
        let class: Vec<f64> = self
            .labels01
            .iter()
            .zip(&sums)
            .filter(|(l, _)| **l == label)
            .map(|(_, s)| *s)
            .collect();
        if class.is_empty() {
            0.0
        } else {
            class.iter().sum::<f64>() / class.len() as f64
        }
    }

    /// Mean total over the correct subset, `mu_{s,1} = alpha + rbar_1`.
    pub fn correct_mean_total(&self) -> Result<f64, AnalysisError> {
        if !self.labels01.contains(&1.0) {
            return Err(AnalysisError::NoCorrectTrajectory);
        }
        Ok(self.alpha + self.class_aux_mean(1.0))
    }
}

/// Composite-GRPO advantages `(s_i - mu_s) / sigma_s` with the sample
/// standard deviation.
pub fn composite_advantages(group: &AnalysisGroup) -> Result<Vec<f64>, AnalysisError> {
    let sigma = group.sample_std();
    if sigma <= 0.0 || sigma.is_nan() {
        return Err(AnalysisError::DegenerateGroup);
    }
    let mu = group.mean_total();
    Ok(group.totals().iter().map(|s| (s - mu) / sigma).collect())
}

/// Returns the group mean of the totals twice: computed directly, and
/// through the class decomposition `alpha p + p rbar_1 + (1-p) rbar_0`.
/// The two agree to floating-point roundoff (the identity is exact).
pub fn mean_decomposition(group: &AnalysisGroup) -> (f64, f64) {
    let direct = group.mean_total();
    let p = group.pass_fraction();
    let decomposed =
        group.alpha * p + p * group.class_aux_mean(1.0) + (1.0 - p) * group.class_aux_mean(0.0);
    (direct, decomposed)
}

/// Mean-based condition for a correct trajectory to carry negative
/// advantage: `mu_{s,1} < mu_s`. Every call is cross-checked against the
/// direct per-trajectory test; a disagreement (possible when several
/// correct trajectories have unequal totals) is returned as an error
/// rather than a wrong answer.
pub fn negative_advantage_exists(group: &AnalysisGroup) -> Result<bool, AnalysisError> {
    if group.sample_std() <= 0.0 {
        return Err(AnalysisError::DegenerateGroup);
    }
    let mu_s1 = group.correct_mean_total()?;
    let mu_s = group.mean_total();
    let condition = mu_s1 < mu_s;
    let direct = group
        .totals()
        .iter()
        .zip(&group.labels01)
        .any(|(s, l)| *l == 1.0 && *s < mu_s);
    if condition != direct {
        return Err(AnalysisError::SignConditionMismatch { mu_s1, mu_s });
    }
    Ok(condition)
}

/// A group on which composite GRPO suppresses a verified-correct
/// trajectory, together with both advantage vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Counterexample {
    pub group: AnalysisGroup,
    pub composite: Vec<f64>,
    pub equal_right: Vec<f64>,
    /// Index of the correct trajectory with negative composite advantage.
    pub flagged: usize,
    pub mu_s: f64,
    pub mu_s1: f64,
    pub draws_used: usize,
}

/// Random search for a counterexample group.
///
/// Draws groups with exactly one correct trajectory and independent
/// uniform auxiliary rewards — the regime where the mean-based condition
/// coincides with the direct check — and returns the first group where the
/// correct trajectory's composite advantage is negative. The group-mean
/// decomposition identity is verified on every draw, and the equal-right
/// advantage of the flagged trajectory is checked to be nonnegative.
pub fn find_counterexample(
    alpha: f64,
    weights: &[f64],
    g: usize,
    seed: u64,
    budget: usize,
) -> Result<Option<Counterexample>, AnalysisError> {
    if g < 2 {
        return Err(AnalysisError::InvalidGroup(
            "need at least 2 trajectories".into(),
        ));
    }
    let k = weights.len();
    let mut rng = stream_rng(seed, &[0xa11a]);
    for draw in 1..=budget {
        let correct_at = rng.random_range(0..g);
        let labels01: Vec<f64> = (0..g)
            .map(|i| if i == correct_at { 1.0 } else { 0.0 })
            .collect();
        let aux01: Vec<Vec<f64>> = (0..g)
            .map(|_| (0..k).map(|_| rng.random_range(0.0..=1.0)).collect())
            .collect();
        let group = AnalysisGroup::new(labels01, aux01, alpha, weights.to_vec())?;

        let (direct, decomposed) = mean_decomposition(&group);
        if (direct - decomposed).abs() > 1e-12 {
            return Err(AnalysisError::InvalidGroup(format!(
                "decomposition identity violated: {direct} vs {decomposed}"
            )));
        }
        if group.sample_std() <= 0.0 {
            continue;
        }
        if !negative_advantage_exists(&group)? {
            continue;
        }

        let composite = composite_advantages(&group)?;
        let flagged = correct_at;
        debug_assert!(composite[flagged] < 0.0);

        // The equal-right rule on the same group: signed labels, scores
        // from the weighted auxiliary sums. One correct among G >= 2 keeps
        // the pass rate at or below one half.
        let signed: Vec<f64> = group
            .labels01
            .iter()
            .map(|l| if *l == 1.0 { 1.0 } else { -1.0 })
            .collect();
        let scores = group.aux_sums();
        let c_q = crate::advantage::pass_rate(&signed);
        let er =
            equal_right_advantage(&signed, &scores, c_q, 0.5).expect("valid labels and threshold");
        assert_eq!(er.rule, AdvantageRule::EqualRight);
        assert!(
            er.values[flagged] >= 0.0,
            "equal-right must not suppress a correct trajectory"
        );

        return Ok(Some(Counterexample {
            mu_s: group.mean_total(),
            mu_s1: group.correct_mean_total()?,
            group,
            composite,
            equal_right: er.values,
            flagged,
            draws_used: draw,
        }));
    }
    Ok(None)
}
