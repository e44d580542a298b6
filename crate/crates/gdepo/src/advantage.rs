//! Per-trajectory advantage computation.
//!
//! Two rules live here. The standard GRPO rule normalizes a group's scores
//! to zero mean and unit (population) standard deviation, which zeroes out
//! degenerate groups: a group in which every trajectory failed carries no
//! signal at all. The equal-right rule instead takes the update direction
//! from the binary verifier label and the update magnitude from min-max
//! normalized auxiliary scores, so every trajectory contributes a
//! sign-correct advantage even in all-correct or all-incorrect groups.
//! A pass-rate gate reverts to the GRPO rule once the group is mostly
//! correct, letting auxiliary rewards refine quality within a reliable
//! solution set.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance below which a group's score spread counts as degenerate.
pub const DEGENERATE_SPREAD: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum AdvantageError {
    #[error("group must contain at least 2 trajectories, got {0}")]
    GroupTooSmall(usize),
    #[error("label at index {index} is {value}, expected +1 or -1")]
    InvalidLabel { index: usize, value: f64 },
    #[error("labels ({labels}) and scores ({scores}) must have equal length")]
    LengthMismatch { labels: usize, scores: usize },
    #[error("pass-rate threshold must lie in (0, 1), got {0}")]
    InvalidThreshold(f64),
}

/// Which rule produced an advantage vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageRule {
    /// Sign from the verifier label, magnitude from min-max normalized scores.
    EqualRight,
    /// GRPO normalization chosen because the pass rate exceeded the threshold.
    GrpoFallback,
    /// Plain GRPO normalization (baseline modes).
    GrpoStandard,
}

/// One advantage value per trajectory, constant across that trajectory's
/// tokens, tagged with the rule that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdvantageVector {
    pub values: Vec<f64>,
    pub rule: AdvantageRule,
    pub pass_rate: f64,
    pub threshold: f64,
}

/// Standard GRPO advantage: `(score_i - mean) / std` with the population
/// standard deviation. Degenerate groups (spread below [`DEGENERATE_SPREAD`])
/// return all zeros rather than dividing by an epsilon, so an all-equal
/// score vector contributes exactly nothing.
pub fn grpo_advantage(scores: &[f64]) -> Result<Vec<f64>, AdvantageError> {
    let g = scores.len();
    if g < 2 {
        return Err(AdvantageError::GroupTooSmall(g));
    }
    let mean = scores.iter().sum::<f64>() / g as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / g as f64;
    let std = var.sqrt();
    if std < DEGENERATE_SPREAD {
        return Ok(vec![0.0; g]);
    }
    Ok(scores.iter().map(|s| (s - mean) / std).collect())
}

/// Min-max normalization onto `[0, 1]`; all 0.5 when the spread is degenerate.
pub fn minmax_normalize(scores: &[f64]) -> Vec<f64> {
    let Some(&first) = scores.first() else {
        return Vec::new();
    };
    let (min, max) = scores.iter().fold((first, first), |(lo, hi), &s| {
        (lo.min(s), hi.max(s))
    });
    if (max - min).abs() < DEGENERATE_SPREAD {
        return vec![0.5; scores.len()];
    }
    scores.iter().map(|s| (s - min) / (max - min)).collect()
}

/// Fraction of labels equal to +1.
pub fn pass_rate(labels: &[f64]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    labels.iter().filter(|l| **l == 1.0).count() as f64 / labels.len() as f64
}

/// Equal-right advantage with pass-rate gating.
///
/// When the pass rate `c_q` exceeds `tau` the group reverts to
/// [`grpo_advantage`] over the scores. Otherwise, with `s_hat` the min-max
/// normalized score, correct trajectories receive `s_hat` (in `[0, 1]`) and
/// incorrect trajectories receive `-(1 - s_hat)` (in `[-1, 0]`), so the sign
/// always agrees with the verifier label.
pub fn equal_right_advantage(
    labels: &[f64],
    scores: &[f64],
    c_q: f64,
    tau: f64,
) -> Result<AdvantageVector, AdvantageError> {
    if labels.len() != scores.len() {
        return Err(AdvantageError::LengthMismatch {
            labels: labels.len(),
            scores: scores.len(),
        });
    }
    if !(0.0 < tau && tau < 1.0) {
        return Err(AdvantageError::InvalidThreshold(tau));
    }
    for (index, &value) in labels.iter().enumerate() {
        if value != 1.0 && value != -1.0 {
            return Err(AdvantageError::InvalidLabel { index, value });
        }
    }

    if c_q > tau {
        let values = grpo_advantage(scores)?;
        return Ok(AdvantageVector {
            values,
            rule: AdvantageRule::GrpoFallback,
            pass_rate: c_q,
            threshold: tau,
        });
    }

    let s_hat = minmax_normalize(scores);
    let values = labels
        .iter()
        .zip(&s_hat)
        .map(|(&l, &s)| {
            let magnitude = (l + 1.0) / 2.0 * s + (1.0 - l) / 2.0 * (1.0 - s);
            let value = l * magnitude;
            // An incorrect trajectory at the score maximum lands on -0.0.
            if value == 0.0 {
                0.0
            } else {
                value
            }
        })
        .collect();
    Ok(AdvantageVector {
        values,
        rule: AdvantageRule::EqualRight,
        pass_rate: c_q,
        threshold: tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grpo_normalizes_two_point_group() {
        let adv = grpo_advantage(&[2.0, 0.0]).unwrap();
        assert_eq!(adv, vec![1.0, -1.0]);
    }

    #[test]
    fn grpo_zeroes_degenerate_group() {
        assert_eq!(grpo_advantage(&[1.0, 1.0, 1.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn grpo_three_point_group() {
        // mean 0, population std sqrt(2/3); first entry (1 - 0)/sqrt(2/3) = sqrt(3/2).
        let adv = grpo_advantage(&[1.0, 0.0, -1.0]).unwrap();
        let expected = (1.5f64).sqrt();
        assert!((adv[0] - expected).abs() < 1e-12);
        assert!(adv[1].abs() < 1e-12);
        assert!((adv[2] + expected).abs() < 1e-12);
    }

    #[test]
    fn grpo_rejects_tiny_groups() {
        assert_eq!(
            grpo_advantage(&[1.0]).unwrap_err(),
            AdvantageError::GroupTooSmall(1)
        );
    }

    #[test]
    fn minmax_examples() {
        let out = minmax_normalize(&[0.2, 0.5, 0.8]);
        assert!((out[0]).abs() < 1e-12);
        assert!((out[1] - 0.5).abs() < 1e-12);
        assert!((out[2] - 1.0).abs() < 1e-12);
        assert_eq!(minmax_normalize(&[0.4, 0.4, 0.4]), vec![0.5; 3]);
        assert!(minmax_normalize(&[]).is_empty());
    }

    #[test]
    fn pass_rate_counts_positive_labels() {
        assert_eq!(pass_rate(&[1.0, -1.0, -1.0, -1.0]), 0.25);
        assert_eq!(pass_rate(&[-1.0, -1.0]), 0.0);
        assert_eq!(pass_rate(&[1.0, 1.0, 1.0, 1.0]), 1.0);
    }

    #[test]
    fn equal_right_worked_example() {
        // s_hat = [0.5, 0, 1, 0]; correct gets s_hat, incorrect -(1 - s_hat).
        let labels = [1.0, -1.0, -1.0, -1.0];
        let scores = [0.5, 0.2, 0.8, 0.2];
        let adv = equal_right_advantage(&labels, &scores, 0.25, 0.5).unwrap();
        assert_eq!(adv.rule, AdvantageRule::EqualRight);
        let expected = [0.5, -1.0, 0.0, -1.0];
        for (got, want) in adv.values.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{:?}", adv.values);
        }
    }

    #[test]
    fn equal_right_degenerate_scores_give_half_magnitude() {
        let labels = [1.0, -1.0, 1.0];
        let scores = [0.4, 0.4, 0.4];
        let adv = equal_right_advantage(&labels, &scores, 2.0 / 3.0, 0.7).unwrap();
        assert_eq!(adv.values, vec![0.5, -0.5, 0.5]);
    }

    #[test]
    fn equal_right_falls_back_above_threshold() {
        let labels = [1.0, 1.0, 1.0, -1.0];
        let scores = [0.2, 0.5, 0.8, 0.2];
        let adv = equal_right_advantage(&labels, &scores, 0.75, 0.5).unwrap();
        assert_eq!(adv.rule, AdvantageRule::GrpoFallback);
        let oracle = grpo_advantage(&scores).unwrap();
        assert_eq!(adv.values, oracle);
    }

    #[test]
    fn equal_right_rejects_invalid_labels() {
        let err = equal_right_advantage(&[1.0, 0.3], &[0.1, 0.2], 0.5, 0.5).unwrap_err();
        assert_eq!(
            err,
            AdvantageError::InvalidLabel {
                index: 1,
                value: 0.3
            }
        );
    }

    #[test]
    fn equal_right_rejects_mismatched_lengths() {
        let err = equal_right_advantage(&[1.0], &[0.1, 0.2], 0.5, 0.5).unwrap_err();
        assert_eq!(
            err,
            AdvantageError::LengthMismatch {
                labels: 1,
                scores: 2
            }
        );
    }

    #[test]
    fn all_incorrect_group_contrast() {
        // Plain GRPO over an all-equal binary score vector yields zeros
        // (the group is wasted); equal-right still produces strictly
        // negative advantages wherever s_hat < 1.
        let labels = vec![-1.0; 4];
        let grpo = grpo_advantage(&labels).unwrap();
        assert_eq!(grpo, vec![0.0; 4]);

        let scores = [0.1, 0.5, 0.9, 0.3];
        let adv = equal_right_advantage(&labels, &scores, 0.0, 0.5).unwrap();
        for (i, v) in adv.values.iter().enumerate() {
            if i == 2 {
                assert_eq!(*v, 0.0); // s_hat = 1 for the max score
            } else {
                assert!(*v < 0.0, "expected strictly negative, got {v}");
            }
        }
    }

    fn arbitrary_group() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
        (2usize..=16).prop_flat_map(|g| {
            (
                proptest::collection::vec(proptest::bool::ANY, g..=g)
                    .prop_map(|bits| bits.into_iter().map(|b| if b { 1.0 } else { -1.0 }).collect()),
                proptest::collection::vec(-5.0f64..5.0, g..=g),
                0.01f64..0.99,
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(4096))]

        #[test]
        fn sign_agreement_and_bounds((labels, scores, tau) in arbitrary_group()) {
            let c_q = pass_rate(&labels);
            let adv = equal_right_advantage(&labels, &scores, c_q, tau).unwrap();
            if adv.rule == AdvantageRule::EqualRight {
                for (a, l) in adv.values.iter().zip(&labels) {
                    prop_assert!(a * l >= 0.0, "sign disagreement: a={a} l={l}");
                    prop_assert!((-1.0..=1.0).contains(a));
                }
            } else {
                // Fallback must be exactly the GRPO oracle.
                let oracle = grpo_advantage(&scores).unwrap();
                prop_assert_eq!(&adv.values, &oracle);
            }
        }

        #[test]
        fn grpo_mean_is_zero_for_nondegenerate_groups(
            scores in proptest::collection::vec(-5.0f64..5.0, 2..16)
        ) {
            let adv = grpo_advantage(&scores).unwrap();
            if adv.iter().any(|a| *a != 0.0) {
                let mean = adv.iter().sum::<f64>() / adv.len() as f64;
                prop_assert!(mean.abs() < 1e-9);
            }
        }

        #[test]
        fn minmax_affine_invariance(
            scores in proptest::collection::vec(-5.0f64..5.0, 2..12),
            shift in -1i32..4,
        ) {
            // Power-of-two scaling with no offset is bit-exact.
            let a = (2.0f64).powi(shift);
            let scaled: Vec<f64> = scores.iter().map(|s| a * s).collect();
            let base = minmax_normalize(&scores);
            let transformed = minmax_normalize(&scaled);
            for (x, y) in base.iter().zip(&transformed) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }

        #[test]
        fn minmax_affine_invariance_with_offset(
            scores in proptest::collection::vec(-5.0f64..5.0, 2..12),
            a in 0.25f64..8.0,
            b in -10.0f64..10.0,
        ) {
            let transformed: Vec<f64> =
                scores.iter().map(|s| a * s + b).collect();
            let base = minmax_normalize(&scores);
            let mapped = minmax_normalize(&transformed);
            // General affine maps pick up rounding; spread can shrink below
            // the degeneracy cutoff only if it was already marginal.
            let spread = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - scores.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assume!(spread > 1e-6);
            for (x, y) in base.iter().zip(&mapped) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn equal_right_affine_invariance_bit_exact(
            (mut labels, scores, _tau) in arbitrary_group(),
            shift in 0i32..3,
        ) {
            // Keep one failure so the pass rate admits a threshold above it.
            labels[0] = -1.0;
            let c_q = pass_rate(&labels);
            let tau = (c_q + 0.03).min(0.97);
            let a = (2.0f64).powi(shift);
            let scaled: Vec<f64> = scores.iter().map(|s| a * s).collect();
            let base = equal_right_advantage(&labels, &scores, c_q, tau).unwrap();
            let transformed = equal_right_advantage(&labels, &scaled, c_q, tau).unwrap();
            for (x, y) in base.values.iter().zip(&transformed.values) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
