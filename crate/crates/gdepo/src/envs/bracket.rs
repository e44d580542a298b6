//! Bracket-matching tasks: emit a balanced sequence that attains a target
//! nesting depth.
//!
//! Episodes are fixed-length: the sampler always emits exactly `max_len`
//! tokens from the two-token vocabulary. Because the depth changes by one
//! per token, attaining the target depth at some point is equivalent to the
//! maximum depth reaching at least the target.

use super::{EnvError, PolicySpace, TaskPayload, TaskSpec};
use crate::rewards::Token;
use serde::{Deserialize, Serialize};

pub const OPEN: Token = 0;
pub const CLOSE: Token = 1;
pub const VOCAB: usize = 2;
pub const FEATURE_DIM: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketPayload {
    pub target_depth: u32,
}

impl BracketPayload {
    pub fn validate(&self, id: u64, max_len: usize) -> Result<(), EnvError> {
        if self.target_depth == 0 {
            return Err(EnvError::InvalidTask(id, "target depth must be >= 1".into()));
        }
        if max_len < 2 * self.target_depth as usize {
            return Err(EnvError::InvalidTask(
                id,
                format!(
                    "max_len {max_len} cannot attain depth {} and re-balance",
                    self.target_depth
                ),
            ));
        }
        Ok(())
    }

    pub fn verify(&self, tokens: &[Token]) -> bool {
        let mut depth: i64 = 0;
        let mut attained = false;
        for &t in tokens {
            depth += if t == OPEN { 1 } else { -1 };
            if depth < 0 {
                return false;
            }
            if depth == self.target_depth as i64 {
                attained = true;
            }
        }
        depth == 0 && attained
    }
}

#[derive(Debug, Clone, Default)]
pub struct BracketCursor {
    pub pos: usize,
    pub depth: i64,
    pub broken: bool,
}

impl BracketCursor {
    pub fn advance(&mut self, token: Token) {
        self.pos += 1;
        self.depth += if token == OPEN { 1 } else { -1 };
        if self.depth < 0 {
            self.broken = true;
            self.depth = 0;
        }
    }
}

/// Tabular state index over (target depth, clamped depth or broken,
/// remaining tokens).
pub fn state_id(
    payload: &BracketPayload,
    space: &PolicySpace,
    cursor: &BracketCursor,
    max_len: usize,
) -> usize {
    let depth_buckets = space.max_len + 2;
    let depth_idx = if cursor.broken {
        0
    } else {
        (cursor.depth as usize + 1).min(depth_buckets - 1)
    };
    let remaining = max_len - cursor.pos; // >= 1 while the episode runs
    let d = (payload.target_depth as usize - 1).min(space.max_depth as usize - 1);
    (d * depth_buckets + depth_idx) * space.max_len + (remaining - 1)
}

/// Dense features over the same information the tabular index carries.
pub fn features(
    payload: &BracketPayload,
    space: &PolicySpace,
    cursor: &BracketCursor,
    max_len: usize,
) -> Vec<f64> {
    let remaining = (max_len - cursor.pos) as f64;
    let target = payload.target_depth as f64;
    vec![
        1.0,
        cursor.depth as f64 / space.max_len as f64,
        remaining / space.max_len as f64,
        target / space.max_depth as f64,
        if (cursor.depth as f64) < target { 1.0 } else { 0.0 },
        if cursor.depth == 0 { 1.0 } else { 0.0 },
        if cursor.broken { 1.0 } else { 0.0 },
    ]
}

/// Builds one bracket task with a certificate of length exactly `max_len`:
/// the deepest well at the front, padded with shallow pairs.
pub fn task(id: u64, target_depth: u32, max_len: usize) -> Result<TaskSpec, EnvError> {
    let payload = BracketPayload { target_depth };
    payload.validate(id, max_len)?;
    if !max_len.is_multiple_of(2) {
        return Err(EnvError::InvalidTask(
            id,
            "bracket episodes are fixed-length, so max_len must be even".into(),
        ));
    }
    let d = target_depth as usize;
    let mut certificate = Vec::with_capacity(max_len);
    certificate.extend(std::iter::repeat_n(OPEN, d));
    certificate.extend(std::iter::repeat_n(CLOSE, d));
    while certificate.len() < max_len {
        certificate.push(OPEN);
        certificate.push(CLOSE);
    }
    let task = TaskSpec {
        id,
        payload: TaskPayload::BracketProof(payload),
        difficulty: target_depth,
        max_len,
        certificate,
    };
    debug_assert!(super::verify(&task, &task.certificate));
    Ok(task)
}

/// Candidate templates across the difficulty range. The uniform-policy
/// success probability falls geometrically with depth, so the deep end is
/// far below any reasonable challenging cutoff.
pub fn menu() -> Vec<TaskSpec> {
    let mut out = Vec::new();
    for (depth, max_len) in [
        (1u32, 4usize),
        (1, 6),
        (2, 6),
        (2, 8),
        (3, 8),
        (3, 10),
        (4, 10),
        (5, 10),
        (5, 12),
        (6, 12),
    ] {
        out.push(task(0, depth, max_len).expect("menu templates are valid"));
    }
    out
}
