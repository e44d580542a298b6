//! Modular-arithmetic chain tasks: apply a sequence of ops to a start value
//! and stop on the target residue.
//!
//! The vocabulary is one token per op plus an explicit stop token, so
//! episodes are variable-length: generation ends at the stop token or when
//! the budget runs out. The verifier folds the op tokens over the start
//! value and accepts when the result equals the target.

use super::{EnvError, PolicySpace, TaskPayload, TaskSpec};
use crate::rewards::Token;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

pub const FEATURE_DIM: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModOp {
    Add(u64),
    Mul(u64),
}

impl ModOp {
    pub fn apply(&self, value: u64, modulus: u64) -> u64 {
        match self {
            ModOp::Add(a) => (value + a) % modulus,
            ModOp::Mul(k) => (value * k) % modulus,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModularPayload {
    pub start: u64,
    pub target: u64,
    pub modulus: u64,
    pub ops: Vec<ModOp>,
}

impl ModularPayload {
    pub fn vocab_size(&self) -> usize {
        self.ops.len() + 1
    }

    pub fn stop_token(&self) -> Token {
        self.ops.len() as Token
    }

    pub fn validate(&self, id: u64) -> Result<(), EnvError> {
        if self.modulus == 0 {
            return Err(EnvError::InvalidTask(id, "modulus must be >= 1".into()));
        }
        if self.ops.is_empty() {
            return Err(EnvError::InvalidTask(id, "op set must be non-empty".into()));
        }
        if self.start >= self.modulus || self.target >= self.modulus {
            return Err(EnvError::InvalidTask(
                id,
                "start and target must be residues below the modulus".into(),
            ));
        }
        Ok(())
    }

    /// Applies op tokens left to right; an explicit stop token ends the
    /// evaluation and anything after it is ignored.
    pub fn verify(&self, tokens: &[Token]) -> bool {
        let mut value = self.start;
        for &t in tokens {
            if t == self.stop_token() {
                break;
            }
            value = self.ops[t as usize].apply(value, self.modulus);
        }
        value == self.target
    }
}

#[derive(Debug, Clone)]
pub struct ModularCursor {
    pub pos: usize,
    pub value: u64,
    pub stopped: bool,
}

impl ModularCursor {
    pub fn new(payload: &ModularPayload) -> Self {
        Self {
            pos: 0,
            value: payload.start,
            stopped: false,
        }
    }

    pub fn advance(&mut self, payload: &ModularPayload, token: Token) {
        self.pos += 1;
        if token == payload.stop_token() {
            self.stopped = true;
        } else {
            self.value = payload.ops[token as usize].apply(self.value, payload.modulus);
        }
    }
}

/// Tabular state index over (current value, target, remaining tokens).
pub fn state_id(
    payload: &ModularPayload,
    space: &PolicySpace,
    cursor: &ModularCursor,
    max_len: usize,
) -> usize {
    let remaining = max_len - cursor.pos;
    ((cursor.value * space.max_modulus + payload.target) as usize) * space.max_len
        + (remaining - 1)
}

pub fn features(
    payload: &ModularPayload,
    space: &PolicySpace,
    cursor: &ModularCursor,
    max_len: usize,
) -> Vec<f64> {
    let m = payload.modulus as f64;
    let remaining = (max_len - cursor.pos) as f64;
    let forward_gap = (payload.target + payload.modulus - cursor.value) % payload.modulus;
    vec![
        1.0,
        cursor.value as f64 / m,
        payload.target as f64 / m,
        if cursor.value == payload.target { 1.0 } else { 0.0 },
        remaining / space.max_len as f64,
        forward_gap as f64 / m,
        if cursor.value == 0 { 1.0 } else { 0.0 },
    ]
}

/// Shortest op sequence from start to target (breadth-first over residues),
/// or none if the target is unreachable.
pub fn shortest_path(payload: &ModularPayload) -> Option<Vec<Token>> {
    if payload.start == payload.target {
        return Some(Vec::new());
    }
    let m = payload.modulus as usize;
    let mut prev: Vec<Option<(u64, Token)>> = vec![None; m];
    let mut seen = vec![false; m];
    let mut queue = VecDeque::new();
    seen[payload.start as usize] = true;
    queue.push_back(payload.start);
    while let Some(v) = queue.pop_front() {
        for (i, op) in payload.ops.iter().enumerate() {
            let next = op.apply(v, payload.modulus);
            if seen[next as usize] {
                continue;
            }
            seen[next as usize] = true;
            prev[next as usize] = Some((v, i as Token));
            if next == payload.target {
                let mut path = Vec::new();
                let mut at = next;
                while at != payload.start {
                    let (from, op) = prev[at as usize].expect("chain back to start");
                    path.push(op);
                    at = from;
                }
                path.reverse();
                return Some(path);
            }
            queue.push_back(next);
        }
    }
    None
}

/// Builds one modular task; the certificate is the shortest op path plus an
/// explicit stop.
pub fn task_from_payload(
    id: u64,
    payload: ModularPayload,
    max_len: usize,
) -> Result<TaskSpec, EnvError> {
    payload.validate(id)?;
    let path = shortest_path(&payload).ok_or_else(|| {
        EnvError::InvalidTask(id, "target unreachable from start under the op set".into())
    })?;
    if path.len() + 1 > max_len {
        return Err(EnvError::InvalidTask(
            id,
            format!(
                "shortest solution needs {} tokens but max_len is {max_len}",
                path.len() + 1
            ),
        ));
    }
    let mut certificate = path.clone();
    certificate.push(payload.stop_token());
    let difficulty = path.len() as u32;
    let task = TaskSpec {
        id,
        payload: TaskPayload::ModularChain(payload),
        difficulty,
        max_len,
        certificate,
    };
    debug_assert!(super::verify(&task, &task.certificate));
    Ok(task)
}

/// Candidate templates: (start, target) residue pairs under a fixed modulus
/// and op set. Longer shortest paths mean fewer accepting walks, pushing
/// the uniform-policy success probability down; the menu keeps the short
/// band (comfortably learnable) and the long band (far below any
/// challenging cutoff) and skips the middle so the two difficulty classes
/// are well separated.
pub fn menu() -> Vec<TaskSpec> {
    menu_with(MENU_MODULUS, MENU_EASY_MAX_DIST, MENU_HARD_MIN_DIST, MENU_HARD_MAX_DIST)
}

pub(crate) const MENU_MODULUS: u64 = 16;
pub(crate) const MENU_EASY_MAX_DIST: u32 = 1;
pub(crate) const MENU_HARD_MIN_DIST: u32 = 6;
pub(crate) const MENU_HARD_MAX_DIST: u32 = 6;

pub(crate) fn menu_with(modulus: u64, easy_max: u32, hard_min: u32, hard_max: u32) -> Vec<TaskSpec> {
    let ops = vec![ModOp::Add(1), ModOp::Mul(2)];
    let max_len = 8usize;
    let mut out = Vec::new();
    for start in 0..modulus {
        for target in 0..modulus {
            if start == target {
                continue;
            }
            let payload = ModularPayload {
                start,
                target,
                modulus,
                ops: ops.clone(),
            };
            if let Ok(task) = task_from_payload(0, payload, max_len) {
                let d = task.difficulty;
                if d <= easy_max || (d >= hard_min && d <= hard_max) {
                    out.push(task);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shortest_path_reaches_target() {
        let payload = ModularPayload {
            start: 2,
            target: 5,
            modulus: 7,
            ops: vec![ModOp::Mul(2), ModOp::Add(1)],
        };
        let path = shortest_path(&payload).unwrap();
        let mut v = payload.start;
        for &t in &path {
            v = payload.ops[t as usize].apply(v, payload.modulus);
        }
        assert_eq!(v, payload.target);
        assert_eq!(path.len(), 2); // x2 then +1
    }

    #[test]
    fn degenerate_modulus_accepts_everything() {
        let payload = ModularPayload {
            start: 0,
            target: 0,
            modulus: 1,
            ops: vec![ModOp::Add(1)],
        };
        assert!(payload.verify(&[0, 0, 0]));
        assert!(payload.verify(&[]));
    }

    #[test]
    fn stop_token_ends_evaluation() {
        let payload = ModularPayload {
            start: 1,
            target: 2,
            modulus: 5,
            ops: vec![ModOp::Add(1)],
        };
        assert!(payload.verify(&[0, 1])); // +1 then stop
        assert!(payload.verify(&[0, 1, 0, 0])); // ops after stop ignored
        assert!(!payload.verify(&[0, 0, 1])); // overshoot
    }

    #[test]
    fn menu_has_a_difficulty_spread() {
        let menu = menu();
        assert!(!menu.is_empty());
        let max_difficulty = menu.iter().map(|t| t.difficulty).max().unwrap();
        let min_difficulty = menu.iter().map(|t| t.difficulty).min().unwrap();
        assert!(min_difficulty == 1);
        assert!(max_difficulty >= 4, "got max distance {max_difficulty}");
    }
}
