//! Desk-scale reinforcement-learning optimization laboratory.
//!
//! Implements the GDEPO algorithm family (dynamic additional sampling,
//! equal-right advantage, dynamic additional iterations) next to a standard
//! GRPO baseline, over small softmax sequence policies with exact analytic
//! gradients and synthetic binary-verifier environments. An analysis toolkit
//! mechanizes the composite-reward failure mode of plain GRPO: with a weighted
//! sum of correctness and auxiliary rewards, a verified-correct trajectory can
//! receive a negative advantage and be actively suppressed.
//!
//! Layout:
//!
//! - [`rewards`]: binary correctness label, repetition and length rewards,
//!   weighted composite scores.
//! - [`advantage`]: group-normalized GRPO advantages and the equal-right
//!   advantage with pass-rate gating.
//! - [`policy`]: tabular / linear-feature softmax policies, the clipped
//!   surrogate objective, its exact gradient, gradient-ascent steps.
//! - [`envs`]: bracket and modular-arithmetic verifier tasks with exhaustive
//!   success-probability enumeration and seeded mixture generation.
//! - [`sampling`]: group rollouts and dynamic additional sampling.
//! - [`trainer`]: the training loop binding the above, with per-mode
//!   advantage rules, dynamic additional iterations, and run metrics.
//! - [`analysis`]: composite-advantage sign analysis, the group-mean
//!   decomposition, and counterexample search.
//! - [`experiment`]: seeded multi-run sweeps with resumable cells and CSV
//!   aggregation.
//! - [`cli`]: the `gdepo` command-line front end.

pub mod advantage;
pub mod analysis;
pub mod cli;
pub mod config;
pub mod envs;
pub mod experiment;
pub mod metrics;
pub mod policy;
pub mod rewards;
pub mod rng;
pub mod sampling;
pub mod trainer;

pub use advantage::{equal_right_advantage, grpo_advantage, AdvantageRule, AdvantageVector};
pub use envs::{generate_mixture, verify, TaskKind, TaskMixture, TaskSpec};
pub use policy::{ClipConfig, PolicyFamily, PolicyParams};
pub use rewards::{AuxRewardVector, RewardConfig};
pub use sampling::{dynamic_additional_sampling, Group, Trajectory};
pub use trainer::{train, TrainConfig, TrainMode};
