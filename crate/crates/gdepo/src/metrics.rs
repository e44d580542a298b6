//! Run metrics: append-only per-update records plus periodic evaluation
//! points, with line-delimited JSON and CSV summary emission.
//!
//! Everything written here is deterministic for a fixed config and seed:
//! no wall-clock values, no hash-map iteration, fixed field order.

use crate::advantage::AdvantageRule;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// One policy update. A group updated `m` times contributes `m` records
/// sharing `iterations_total = m`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub batch: usize,
    /// Absent in batch-accumulated mode, where one step spans a whole batch.
    pub query_id: Option<u64>,
    pub rounds_used: usize,
    pub has_success: bool,
    pub pass_rate: f64,
    pub rule: AdvantageRule,
    /// 1-based update iteration within this group.
    pub iteration: usize,
    pub iterations_total: usize,
    pub objective: f64,
    pub discarded_trajectories: usize,
}

/// Held-out evaluation snapshot.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalPoint {
    /// Ascent steps completed when this evaluation ran.
    pub step: usize,
    /// Epochs completed (0 for the pre-training evaluation).
    pub epoch: usize,
    /// Mean per-trajectory success over the held-out tasks.
    pub success_rate: f64,
    pub mean_tokens: f64,
    /// Mean n-gram repetition fraction over held-out completions.
    pub repetition_rate: f64,
    /// Training groups by rounds_used since the previous evaluation
    /// (index k-1 holds the count for k rounds).
    pub rounds_histogram: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MetricsRecord {
    Step(StepRecord),
    Eval(EvalPoint),
}

/// The full, append-only record stream of one training run.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct RunMetrics {
    pub mode: String,
    pub records: Vec<MetricsRecord>,
}

impl RunMetrics {
    pub fn new(mode: impl Into<String>) -> Self {
        Self {
            mode: mode.into(),
            records: Vec::new(),
        }
    }

    pub fn push_step(&mut self, record: StepRecord) {
        self.records.push(MetricsRecord::Step(record));
    }

    pub fn push_eval(&mut self, point: EvalPoint) {
        self.records.push(MetricsRecord::Eval(point));
    }

    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            MetricsRecord::Step(s) => Some(s),
            MetricsRecord::Eval(_) => None,
        })
    }

    pub fn evals(&self) -> impl Iterator<Item = &EvalPoint> {
        self.records.iter().filter_map(|r| match r {
            MetricsRecord::Eval(e) => Some(e),
            MetricsRecord::Step(_) => None,
        })
    }

    /// Total ascent steps applied during the run.
    pub fn total_ascent_steps(&self) -> usize {
        self.steps().count()
    }

    pub fn final_eval(&self) -> Option<&EvalPoint> {
        self.evals().last()
    }

    pub fn initial_eval(&self) -> Option<&EvalPoint> {
        self.evals().next()
    }

    /// One JSON record per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("metrics serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, writer: &mut impl Write) -> std::io::Result<()> {
        writer.write_all(self.to_jsonl().as_bytes())
    }

    /// CSV summary: one row per evaluation point. The first line names the
    /// schema version.
    pub fn to_summary_csv(&self) -> String {
        let mut out = String::from("# schema: gdepo.summary.v1\n");
        out.push_str("step,mode,success_rate,mean_tokens,repetition_rate,rounds_histogram\n");
        for eval in self.evals() {
            let histogram = eval
                .rounds_histogram
                .iter()
                .enumerate()
                .map(|(k, count)| format!("{}:{}", k + 1, count))
                .collect::<Vec<_>>()
                .join(";");
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                eval.step,
                self.mode,
                eval.success_rate,
                eval.mean_tokens,
                eval.repetition_rate,
                histogram
            ));
        }
        out
    }

    pub fn write_summary_csv(&self, writer: &mut impl Write) -> std::io::Result<()> {
        writer.write_all(self.to_summary_csv().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_metrics() -> RunMetrics {
        let mut m = RunMetrics::new("gdepo");
        m.push_eval(EvalPoint {
            step: 0,
            epoch: 0,
            success_rate: 0.125,
            mean_tokens: 6.5,
            repetition_rate: 0.25,
            rounds_histogram: vec![0, 0, 0],
        });
        m.push_step(StepRecord {
            epoch: 1,
            batch: 0,
            query_id: Some(3),
            rounds_used: 2,
            has_success: true,
            pass_rate: 0.25,
            rule: AdvantageRule::EqualRight,
            iteration: 1,
            iterations_total: 2,
            objective: 0.05,
            discarded_trajectories: 4,
        });
        m
    }

    #[test]
    fn jsonl_roundtrip() {
        let metrics = sample_metrics();
        let text = metrics.to_jsonl();
        assert_eq!(text.lines().count(), 2);
        let parsed: Vec<MetricsRecord> = text
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(parsed, metrics.records);
    }

    #[test]
    fn summary_csv_has_versioned_header_and_one_row_per_eval() {
        let csv = sample_metrics().to_summary_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# schema: gdepo.summary.v1");
        assert!(lines[1].starts_with("step,mode,"));
        assert_eq!(lines.len(), 3);
        assert!(lines[2].contains("1:0;2:0;3:0"));
    }

    #[test]
    fn serialization_is_deterministic() {
        let metrics = sample_metrics();
        assert_eq!(metrics.to_jsonl(), metrics.to_jsonl());
        assert_eq!(metrics.to_summary_csv(), metrics.to_summary_csv());
    }
}
