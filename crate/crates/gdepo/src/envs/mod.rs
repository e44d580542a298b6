//! Synthetic verifiable tasks: a policy emits a token sequence and a
//! deterministic verifier accepts or rejects it.
//!
//! Two families are provided. `bracket_proof` asks for a balanced bracket
//! sequence that attains a target nesting depth; episodes have a fixed
//! token budget, so the sampler always emits exactly `max_len` tokens.
//! `modular_chain` asks for a chain of arithmetic ops carrying a start
//! value to a target residue; episodes are variable-length, terminated by
//! an explicit stop token or the budget. Both verifiers are pure functions
//! of (payload, tokens), every generated task stores a certificate sequence
//! that is re-verified at load, and success probabilities under a policy
//! can be enumerated exactly for any task small enough to exhaust.

mod bracket;
mod modular;

pub use bracket::BracketPayload;
pub use modular::{ModOp, ModularPayload};

use crate::policy::{Obs, PolicyFamily, PolicyParams};
use crate::rewards::Token;
use crate::rng::stream_rng;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

/// Enumeration budget: tasks whose reachable-sequence count exceeds this
/// cannot be scored exactly.
pub const ENUMERATION_BUDGET: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("task {0} is malformed: {1}")]
    InvalidTask(u64, String),
    #[error("query does not belong to the policy's environment family: {0}")]
    InvalidQuery(String),
    #[error("exhaustive enumeration would visit more than {budget} sequences")]
    OracleUnavailable { budget: usize },
    #[error("cannot satisfy mixture: {0}")]
    InfeasibleMixture(String),
    #[error("certificate of task {0} failed verification")]
    BadCertificate(u64),
    #[error("task file line {line}: {message}")]
    BadTaskRecord { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    BracketProof,
    ModularChain,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TaskKind::BracketProof => write!(f, "bracket_proof"),
            TaskKind::ModularChain => write!(f, "modular_chain"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskPayload {
    BracketProof(BracketPayload),
    ModularChain(ModularPayload),
}

/// One verifiable task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: u64,
    pub payload: TaskPayload,
    pub difficulty: u32,
    pub max_len: usize,
    /// An accepting sequence, stored at generation time and re-verified on
    /// load.
    pub certificate: Vec<Token>,
}

impl TaskSpec {
    pub fn kind(&self) -> TaskKind {
        match self.payload {
            TaskPayload::BracketProof(_) => TaskKind::BracketProof,
            TaskPayload::ModularChain(_) => TaskKind::ModularChain,
        }
    }

    pub fn vocab_size(&self) -> usize {
        match &self.payload {
            TaskPayload::BracketProof(_) => bracket::VOCAB,
            TaskPayload::ModularChain(p) => p.vocab_size(),
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.max_len == 0 {
            return Err(EnvError::InvalidTask(self.id, "max_len must be >= 1".into()));
        }
        match &self.payload {
            TaskPayload::BracketProof(p) => p.validate(self.id, self.max_len),
            TaskPayload::ModularChain(p) => p.validate(self.id),
        }
    }
}

/// Deterministic accept/reject for a token sequence. Overlong or
/// out-of-vocabulary sequences are rejected, never an error.
pub fn verify(task: &TaskSpec, tokens: &[Token]) -> bool {
    if tokens.len() > task.max_len {
        return false;
    }
    if tokens.iter().any(|t| (*t as usize) >= task.vocab_size()) {
        return false;
    }
    match &task.payload {
        TaskPayload::BracketProof(p) => p.verify(tokens),
        TaskPayload::ModularChain(p) => p.verify(tokens),
    }
}

/// Incremental generation state for one episode.
#[derive(Debug, Clone)]
pub enum Cursor {
    Bracket(bracket::BracketCursor),
    Modular(modular::ModularCursor),
}

impl TaskSpec {
    pub fn start_cursor(&self) -> Cursor {
        match &self.payload {
            TaskPayload::BracketProof(_) => Cursor::Bracket(bracket::BracketCursor::default()),
            TaskPayload::ModularChain(p) => Cursor::Modular(modular::ModularCursor::new(p)),
        }
    }

    pub fn advance(&self, cursor: &mut Cursor, token: Token) {
        match (&self.payload, cursor) {
            (TaskPayload::BracketProof(_), Cursor::Bracket(c)) => c.advance(token),
            (TaskPayload::ModularChain(p), Cursor::Modular(c)) => c.advance(p, token),
            _ => unreachable!("cursor kind matches task kind by construction"),
        }
    }

    /// Whether the episode ends at this cursor (before emitting another
    /// token).
    pub fn episode_over(&self, cursor: &Cursor) -> bool {
        match cursor {
            Cursor::Bracket(c) => c.pos >= self.max_len,
            Cursor::Modular(c) => c.stopped || c.pos >= self.max_len,
        }
    }
}

/// Shared observation space for one environment family, sized to cover a
/// task list. Both the tabular state indexing and the linear features are
/// defined here so a single policy spans every task in the family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpace {
    pub kind: TaskKind,
    pub vocab: usize,
    pub max_len: usize,
    /// Largest bracket target depth in the family (1 for modular).
    pub max_depth: u32,
    /// Largest modulus in the family (1 for bracket).
    pub max_modulus: u64,
}

impl PolicySpace {
    /// Builds the space covering a task list. All tasks must share one
    /// environment family (and, for modular tasks, one op set).
    pub fn for_tasks(tasks: &[TaskSpec]) -> Result<Self, EnvError> {
        let first = tasks
            .first()
            .ok_or_else(|| EnvError::InvalidQuery("empty task list".into()))?;
        let kind = first.kind();
        let vocab = first.vocab_size();
        let mut max_len = 0;
        let mut max_depth = 1;
        let mut max_modulus = 1;
        let mut ops_signature: Option<Vec<ModOp>> = None;
        for task in tasks {
            task.validate()?;
            if task.kind() != kind {
                return Err(EnvError::InvalidQuery(format!(
                    "mixed task kinds {kind} and {} in one family",
                    task.kind()
                )));
            }
            max_len = max_len.max(task.max_len);
            match &task.payload {
                TaskPayload::BracketProof(p) => max_depth = max_depth.max(p.target_depth),
                TaskPayload::ModularChain(p) => {
                    max_modulus = max_modulus.max(p.modulus);
                    match &ops_signature {
                        None => ops_signature = Some(p.ops.clone()),
                        Some(sig) if *sig == p.ops => {}
                        Some(_) => {
                            return Err(EnvError::InvalidQuery(
                                "modular tasks in one family must share an op set".into(),
                            ))
                        }
                    }
                }
            }
        }
        Ok(Self {
            kind,
            vocab,
            max_len,
            max_depth,
            max_modulus,
        })
    }

    pub fn num_states(&self) -> usize {
        match self.kind {
            // (target depth) x (clamped depth incl. one broken bucket) x (remaining)
            TaskKind::BracketProof => {
                self.max_depth as usize * (self.max_len + 2) * self.max_len
            }
            // (value) x (target) x (remaining)
            TaskKind::ModularChain => {
                (self.max_modulus * self.max_modulus) as usize * self.max_len
            }
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self.kind {
            TaskKind::BracketProof => bracket::FEATURE_DIM,
            TaskKind::ModularChain => modular::FEATURE_DIM,
        }
    }

    /// Checks that a task is covered by this space.
    pub fn admits(&self, task: &TaskSpec) -> Result<(), EnvError> {
        if task.kind() != self.kind || task.vocab_size() != self.vocab {
            return Err(EnvError::InvalidQuery(format!(
                "task {} ({}) does not match the policy family ({})",
                task.id,
                task.kind(),
                self.kind
            )));
        }
        if task.max_len > self.max_len {
            return Err(EnvError::InvalidQuery(format!(
                "task {} length {} exceeds family bound {}",
                task.id, task.max_len, self.max_len
            )));
        }
        let in_bounds = match &task.payload {
            TaskPayload::BracketProof(p) => p.target_depth <= self.max_depth,
            TaskPayload::ModularChain(p) => p.modulus <= self.max_modulus,
        };
        if !in_bounds {
            return Err(EnvError::InvalidQuery(format!(
                "task {} payload exceeds family bounds",
                task.id
            )));
        }
        Ok(())
    }

    /// Fresh zero-initialized (uniform) policy parameters for this space.
    pub fn initial_params(&self, family: PolicyFamily) -> PolicyParams {
        match family {
            PolicyFamily::Tabular => PolicyParams::tabular(self.num_states(), self.vocab),
            PolicyFamily::Linear => PolicyParams::linear(self.feature_dim(), self.vocab),
        }
    }
}

/// Observation for the current cursor, encoded for the given policy family.
pub fn observe(
    task: &TaskSpec,
    space: &PolicySpace,
    cursor: &Cursor,
    family: PolicyFamily,
) -> Obs {
    match (cursor, &task.payload) {
        (Cursor::Bracket(c), TaskPayload::BracketProof(p)) => match family {
            PolicyFamily::Tabular => Obs::one_hot(bracket::state_id(p, space, c, task.max_len)),
            PolicyFamily::Linear => Obs::dense(&bracket::features(p, space, c, task.max_len)),
        },
        (Cursor::Modular(c), TaskPayload::ModularChain(p)) => match family {
            PolicyFamily::Tabular => Obs::one_hot(modular::state_id(p, space, c, task.max_len)),
            PolicyFamily::Linear => Obs::dense(&modular::features(p, space, c, task.max_len)),
        },
        _ => unreachable!("cursor kind matches task kind by construction"),
    }
}

/// Per-token log-probabilities of an arbitrary token sequence for this task.
pub fn token_logprobs_for_task(
    params: &PolicyParams,
    space: &PolicySpace,
    task: &TaskSpec,
    tokens: &[Token],
) -> Result<Vec<f64>, crate::policy::PolicyError> {
    let mut cursor = task.start_cursor();
    let mut obs = Vec::with_capacity(tokens.len());
    for &token in tokens {
        obs.push(observe(task, space, &cursor, params.family));
        task.advance(&mut cursor, token);
    }
    crate::policy::token_logprobs(params, &obs, tokens)
}

/// Exact probability that a sequence sampled from the policy verifies,
/// obtained by summing policy probabilities over every reachable sequence.
pub fn enumerate_success_probability(
    task: &TaskSpec,
    space: &PolicySpace,
    params: &PolicyParams,
) -> Result<f64, EnvError> {
    space.admits(task)?;
    let probs = |cursor: &Cursor| -> Vec<f64> {
        let obs = observe(task, space, cursor, params.family);
        let z = crate::policy::logits(params, &obs).expect("space admits task");
        crate::policy::log_softmax(&z).iter().map(|lp| lp.exp()).collect()
    };
    enumerate_with(task, &probs)
}

/// Success probability under the uniform policy; used to classify task
/// difficulty.
pub fn uniform_success_probability(task: &TaskSpec) -> Result<f64, EnvError> {
    let uniform = vec![1.0 / task.vocab_size() as f64; task.vocab_size()];
    enumerate_with(task, &|_cursor: &Cursor| uniform.clone())
}

fn enumerate_with(
    task: &TaskSpec,
    probs: &dyn Fn(&Cursor) -> Vec<f64>,
) -> Result<f64, EnvError> {
    task.validate()?;
    let mut visited = 0usize;
    let mut prefix = Vec::with_capacity(task.max_len);
    let cursor = task.start_cursor();
    dfs(task, probs, &cursor, &mut prefix, 1.0, &mut visited)
}

fn dfs(
    task: &TaskSpec,
    probs: &dyn Fn(&Cursor) -> Vec<f64>,
    cursor: &Cursor,
    prefix: &mut Vec<Token>,
    mass: f64,
    visited: &mut usize,
) -> Result<f64, EnvError> {
    if task.episode_over(cursor) {
        *visited += 1;
        if *visited > ENUMERATION_BUDGET {
            return Err(EnvError::OracleUnavailable {
                budget: ENUMERATION_BUDGET,
            });
        }
        return Ok(if verify(task, prefix) { mass } else { 0.0 });
    }
    let step_probs = probs(cursor);
    let mut total = 0.0;
    for (token, p) in step_probs.iter().enumerate() {
        let token = token as Token;
        let mut next = cursor.clone();
        task.advance(&mut next, token);
        prefix.push(token);
        total += dfs(task, probs, &next, prefix, mass * p, visited)?;
        prefix.pop();
    }
    Ok(total)
}

/// Seeded mixture request: a task list with an exact count of challenging
/// tasks, where challenging means the uniform-policy success probability
/// falls below the cutoff.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskMixture {
    pub kind: TaskKind,
    pub total_count: usize,
    pub challenging_fraction: f64,
    /// Uniform-policy success probability below which a task counts as
    /// challenging. At the default, 32 independent samples from the initial
    /// policy are expected to produce well under one success.
    pub challenging_cutoff: f64,
    pub seed: u64,
}

impl TaskMixture {
    pub fn new(kind: TaskKind, total_count: usize, challenging_fraction: f64, seed: u64) -> Self {
        Self {
            kind,
            total_count,
            challenging_fraction,
            challenging_cutoff: 1.5e-2,
            seed,
        }
    }
}

/// Generates a seeded, reproducible task list with exactly
/// `round(fraction * total)` challenging tasks.
pub fn generate_mixture(mixture: &TaskMixture) -> Result<Vec<TaskSpec>, EnvError> {
    if !(0.0..=1.0).contains(&mixture.challenging_fraction) {
        return Err(EnvError::InfeasibleMixture(format!(
            "challenging_fraction must lie in [0, 1], got {}",
            mixture.challenging_fraction
        )));
    }
    let n_challenging =
        (mixture.challenging_fraction * mixture.total_count as f64).round() as usize;
    let n_easy = mixture.total_count - n_challenging;

    let menu = match mixture.kind {
        TaskKind::BracketProof => bracket::menu(),
        TaskKind::ModularChain => modular::menu(),
    };
    let mut easy_pool = Vec::new();
    let mut hard_pool = Vec::new();
    for template in menu {
        let p = uniform_success_probability(&template)?;
        if p <= 0.0 {
            continue; // unsolvable templates never enter a mixture
        }
        if p < mixture.challenging_cutoff {
            hard_pool.push(template);
        } else {
            easy_pool.push(template);
        }
    }
    if n_easy > 0 && easy_pool.is_empty() {
        return Err(EnvError::InfeasibleMixture(format!(
            "no {} templates at or above cutoff {}",
            mixture.kind, mixture.challenging_cutoff
        )));
    }
    if n_challenging > 0 && hard_pool.is_empty() {
        return Err(EnvError::InfeasibleMixture(format!(
            "no {} templates below cutoff {}",
            mixture.kind, mixture.challenging_cutoff
        )));
    }

    let mut rng = stream_rng(mixture.seed, &[0x7a5c]);
    let mut tasks = Vec::with_capacity(mixture.total_count);
    for i in 0..mixture.total_count {
        let pool = if i < n_challenging { &hard_pool } else { &easy_pool };
        let mut task = pool[rng.random_range(0..pool.len())].clone();
        task.id = i as u64;
        tasks.push(task);
    }
    tasks.shuffle(&mut rng);
    for task in &tasks {
        if !verify(task, &task.certificate) {
            return Err(EnvError::BadCertificate(task.id));
        }
    }
    Ok(tasks)
}

/// Writes one task record per line.
pub fn save_tasks(path: &Path, tasks: &[TaskSpec]) -> Result<(), EnvError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for task in tasks {
        let line = serde_json::to_string(task).expect("task serializes");
        writeln!(file, "{line}")?;
    }
    Ok(())
}

/// Loads a task file, re-verifying every certificate.
pub fn load_tasks(path: &Path) -> Result<Vec<TaskSpec>, EnvError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut tasks = Vec::new();
    for (idx, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let task: TaskSpec = serde_json::from_str(&line).map_err(|e| EnvError::BadTaskRecord {
            line: idx + 1,
            message: e.to_string(),
        })?;
        task.validate()?;
        if !verify(&task, &task.certificate) {
            return Err(EnvError::BadCertificate(task.id));
        }
        tasks.push(task);
    }
    Ok(tasks)
}


#[cfg(test)]
mod tests {
    use super::*;

    fn bracket_task(depth: u32, max_len: usize) -> TaskSpec {
        bracket::task(0, depth, max_len).unwrap()
    }

    #[test]
    fn bracket_verify_basics() {
        let task = bracket_task(1, 4);
        assert!(verify(&task, &[bracket::OPEN, bracket::CLOSE])); // "()"
        assert!(!verify(&task, &[bracket::OPEN, bracket::OPEN])); // "(("
        assert!(!verify(&task, &[bracket::CLOSE, bracket::OPEN])); // ")("
        assert!(!verify(&task, &[bracket::OPEN; 6])); // overlong
        assert!(!verify(&task, &[7, 7])); // out of vocabulary
    }

    #[test]
    fn bracket_depth_must_be_attained() {
        let task = bracket_task(2, 6);
        // "()()" is balanced but never reaches depth 2.
        assert!(!verify(
            &task,
            &[bracket::OPEN, bracket::CLOSE, bracket::OPEN, bracket::CLOSE]
        ));
        // "(())" attains depth 2.
        assert!(verify(
            &task,
            &[bracket::OPEN, bracket::OPEN, bracket::CLOSE, bracket::CLOSE]
        ));
        // "((()))" exceeds depth 2 and passes through it.
        assert!(verify(
            &task,
            &[
                bracket::OPEN,
                bracket::OPEN,
                bracket::OPEN,
                bracket::CLOSE,
                bracket::CLOSE,
                bracket::CLOSE
            ]
        ));
    }

    #[test]
    fn modular_verify_example() {
        // start 2, target 5, modulus 7, ops {x2, +1}: [x2, +1] -> 2*2+1 = 5.
        let payload = ModularPayload {
            start: 2,
            target: 5,
            modulus: 7,
            ops: vec![ModOp::Mul(2), ModOp::Add(1)],
        };
        let task = modular::task_from_payload(0, payload, 4).unwrap();
        assert!(verify(&task, &[0, 1]));
        assert!(verify(&task, &[0, 1, task.vocab_size() as Token - 1])); // with stop
        assert!(!verify(&task, &[1, 0])); // 2+1 = 3, *2 = 6
    }

    #[test]
    fn enumeration_matches_brute_force_count_for_uniform_policy() {
        // vocab 2, max_len 4: sixteen sequences, each with probability 1/16.
        let task = bracket_task(1, 4);
        let mut accepted = 0u32;
        for bits in 0..16u32 {
            let tokens: Vec<Token> = (0..4).map(|i| (bits >> i) & 1).collect();
            if verify(&task, &tokens) {
                accepted += 1;
            }
        }
        let p = uniform_success_probability(&task).unwrap();
        assert!((p - accepted as f64 / 16.0).abs() < 1e-15);
        assert_eq!(accepted, 2); // "()()" and "(())"
    }

    #[test]
    fn enumeration_with_policy_hits_extremes() {
        let task = bracket_task(1, 2);
        let space = PolicySpace::for_tasks(std::slice::from_ref(&task)).unwrap();

        // Dominant logits along the certificate: success probability ~ 1.
        let mut params = space.initial_params(PolicyFamily::Tabular);
        let mut cursor = task.start_cursor();
        for &token in &task.certificate {
            let obs = observe(&task, &space, &cursor, PolicyFamily::Tabular);
            params.theta[obs.active[0].0 * space.vocab + token as usize] = 60.0;
            task.advance(&mut cursor, token);
        }
        let p = enumerate_success_probability(&task, &space, &params).unwrap();
        assert!(p > 1.0 - 1e-9);

        // Dominant logits on a rejecting sequence: success probability ~ 0.
        let mut params = space.initial_params(PolicyFamily::Tabular);
        let mut cursor = task.start_cursor();
        for &token in &[bracket::CLOSE, bracket::CLOSE] {
            let obs = observe(&task, &space, &cursor, PolicyFamily::Tabular);
            params.theta[obs.active[0].0 * space.vocab + token as usize] = 60.0;
            task.advance(&mut cursor, token);
        }
        let p = enumerate_success_probability(&task, &space, &params).unwrap();
        assert!(p < 1e-9);
    }

    #[test]
    fn enumeration_budget_is_enforced() {
        let task = bracket_task(1, 24);
        assert!(matches!(
            uniform_success_probability(&task),
            Err(EnvError::OracleUnavailable { .. })
        ));
    }

    #[test]
    fn bracket_difficulty_is_monotone_in_depth() {
        let mut last = f64::INFINITY;
        for depth in 1..=5 {
            let task = bracket_task(depth, 12);
            let p = uniform_success_probability(&task).unwrap();
            assert!(
                p <= last + 1e-15,
                "depth {depth}: p = {p} should not exceed {last}"
            );
            last = p;
        }
    }

    #[test]
    fn mixture_counts_are_exact() {
        let mixture = TaskMixture::new(TaskKind::ModularChain, 40, 0.3, 11);
        let tasks = generate_mixture(&mixture).unwrap();
        assert_eq!(tasks.len(), 40);
        let challenging = tasks
            .iter()
            .filter(|t| uniform_success_probability(t).unwrap() < mixture.challenging_cutoff)
            .count();
        assert_eq!(challenging, 12);
    }

    #[test]
    fn mixture_edge_fractions() {
        let cutoff = TaskMixture::new(TaskKind::BracketProof, 1, 0.0, 0).challenging_cutoff;
        let all_easy = generate_mixture(&TaskMixture::new(TaskKind::BracketProof, 10, 0.0, 3)).unwrap();
        for task in &all_easy {
            assert!(uniform_success_probability(task).unwrap() >= cutoff);
        }
        let all_hard = generate_mixture(&TaskMixture::new(TaskKind::BracketProof, 10, 1.0, 3)).unwrap();
        for task in &all_hard {
            assert!(uniform_success_probability(task).unwrap() < cutoff);
        }
    }

    #[test]
    fn mixture_is_reproducible() {
        let mixture = TaskMixture::new(TaskKind::BracketProof, 25, 0.4, 99);
        let a = generate_mixture(&mixture).unwrap();
        let b = generate_mixture(&mixture).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn every_generated_task_is_solvable() {
        for kind in [TaskKind::BracketProof, TaskKind::ModularChain] {
            let tasks = generate_mixture(&TaskMixture::new(kind, 30, 0.5, 42)).unwrap();
            for task in &tasks {
                assert!(verify(task, &task.certificate), "task {} certificate", task.id);
                assert!(task.certificate.len() <= task.max_len);
            }
        }
    }

    #[test]
    fn task_roundtrip_reverifies_certificates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.jsonl");
        let tasks = generate_mixture(&TaskMixture::new(TaskKind::ModularChain, 12, 0.25, 5)).unwrap();
        save_tasks(&path, &tasks).unwrap();
        let loaded = load_tasks(&path).unwrap();
        assert_eq!(tasks, loaded);

        // Corrupt a certificate: load must fail.
        let mut broken = tasks.clone();
        broken[0].certificate = vec![0; broken[0].max_len + 2];
        save_tasks(&path, &broken).unwrap();
        assert!(matches!(load_tasks(&path), Err(EnvError::BadCertificate(_))));
    }

    #[test]
    fn space_rejects_mixed_families() {
        let a = bracket_task(1, 4);
        let b = modular::menu().pop().unwrap();
        assert!(PolicySpace::for_tasks(&[a, b]).is_err());
    }
}
