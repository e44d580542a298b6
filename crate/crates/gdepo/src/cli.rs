//! The `gdepo` command-line front end.
//!
//! Subcommands: `train` (one config file), `experiment` (a plan file),
//! `analyze counterexample`, `tasks generate`, and `eval` (held-out success
//! of a saved policy). Usage errors — unknown flags, missing or malformed
//! config files — exit with status 2; runtime failures exit with 1.

use crate::analysis::{find_counterexample, AnalysisError, Counterexample};
use crate::config::{ConfigError, FileConfig};
use crate::envs::{self, EnvError, TaskKind, TaskMixture};
use crate::experiment::{run_experiment, ExperimentError, ExperimentPlan};
use crate::trainer::{evaluate, train, SavedPolicy, TrainConfig, TrainError};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use thiserror::Error;

pub const USAGE_EXIT: i32 = 2;
pub const FAILURE_EXIT: i32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("cannot read policy file {path}: {message}")]
    PolicyFile { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Usage-class errors (bad flags and malformed inputs) exit with 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::PolicyFile { .. } => USAGE_EXIT,
            CliError::Experiment(
                ExperimentError::Plan(_)
                | ExperimentError::Read { .. }
                | ExperimentError::Parse { .. },
            ) => USAGE_EXIT,
            _ => FAILURE_EXIT,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "gdepo",
    version,
    about = "Policy-optimization laboratory: GRPO and GDEPO over synthetic verifier tasks"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one training configuration and write metrics, summary, and the
    /// trained policy.
    Train(TrainArgs),
    /// Execute an experiment plan (variants x fractions x seeds).
    Experiment(ExperimentArgs),
    /// Analysis utilities.
    Analyze(AnalyzeArgs),
    /// Task-list utilities.
    Tasks(TasksArgs),
    /// Evaluate a saved policy on a task file.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// TOML config file with [train] and [tasks] sections.
    #[arg(long)]
    config: PathBuf,
    /// Override the config file's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $GDEPO_OUT_DIR or ./gdepo-out).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// TOML plan file.
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(subcommand)]
    command: AnalyzeCommand,
}

#[derive(Debug, Subcommand)]
enum AnalyzeCommand {
    /// Search for a group where composite GRPO gives a correct trajectory
    /// a negative advantage while the equal-right rule does not.
    Counterexample(CounterexampleArgs),
}

#[derive(Debug, Args)]
struct CounterexampleArgs {
    /// Correctness weight.
    #[arg(long, default_value_t = 0.3)]
    alpha: f64,
    /// Auxiliary weights (must sum to 1).
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0])]
    weights: Vec<f64>,
    /// Group size.
    #[arg(long, default_value_t = 3)]
    group_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum random draws.
    #[arg(long, default_value_t = 1000)]
    budget: usize,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TasksArgs {
    #[command(subcommand)]
    command: TasksCommand,
}

#[derive(Debug, Subcommand)]
enum TasksCommand {
    /// Generate a seeded task mixture and write one record per line.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Environment family: bracket_proof or modular_chain.
    #[arg(long, value_parser = parse_kind, default_value = "modular_chain")]
    kind: TaskKind,
    #[arg(long, default_value_t = 40)]
    count: usize,
    #[arg(long, default_value_t = 0.3)]
    challenging_fraction: f64,
    /// Uniform-policy success probability below which a task is challenging.
    #[arg(long, default_value_t = 1.5e-2)]
    cutoff: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output task file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// policy.json written by `train`.
    #[arg(long)]
    policy: PathBuf,
    /// Task file to evaluate on.
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long, default_value_t = 16)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_kind(s: &str) -> Result<TaskKind, String> {
    match s {
        "bracket_proof" => Ok(TaskKind::BracketProof),
        "modular_chain" => Ok(TaskKind::ModularChain),
        other => Err(format!(
            "unknown task kind {other} (expected bracket_proof or modular_chain)"
        )),
    }
}

/// Entry point used by `main` and by tests: parses argv, runs the command,
/// prints diagnostics, and returns the process exit status.
pub fn cli_entry<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => USAGE_EXIT,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn output_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("GDEPO_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("gdepo-out"))
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train(args) => run_train(args),
        Command::Experiment(args) => run_experiment_cmd(args),
        Command::Analyze(args) => match args.command {
            AnalyzeCommand::Counterexample(args) => run_counterexample(args),
        },
        Command::Tasks(args) => match args.command {
            TasksCommand::Generate(args) => run_generate(args),
        },
        Command::Eval(args) => run_eval(args),
    }
}

fn run_train(args: TrainArgs) -> Result<(), CliError> {
    let mut file = FileConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        file.train.seed = seed;
    }
    let out = output_dir(args.out);
    std::fs::create_dir_all(&out)?;

    let (tasks, holdout) = file.tasks.resolve(file.train.seed)?;
    let run = train(&file.train, &tasks, &holdout)?;

    envs::save_tasks(&out.join("tasks.jsonl"), &tasks)?;
    envs::save_tasks(&out.join("holdout.jsonl"), &holdout)?;
    std::fs::write(out.join("config.toml"), file.to_toml())?;
    std::fs::write(out.join("metrics.jsonl"), run.metrics.to_jsonl())?;
    std::fs::write(out.join("summary.csv"), run.metrics.to_summary_csv())?;
    let saved = SavedPolicy {
        space: run.space,
        params: run.params,
    };
    std::fs::write(
        out.join("policy.json"),
        serde_json::to_string_pretty(&saved).expect("policy serializes"),
    )?;

    let final_eval = run.metrics.final_eval().expect("final eval recorded");
    println!(
        "mode={} steps={} success_rate={:.4} mean_tokens={:.2} repetition_rate={:.4} out={}",
        run.metrics.mode,
        run.metrics.total_ascent_steps(),
        final_eval.success_rate,
        final_eval.mean_tokens,
        final_eval.repetition_rate,
        out.display()
    );
    Ok(())
}

fn run_experiment_cmd(args: ExperimentArgs) -> Result<(), CliError> {
    let plan = ExperimentPlan::load(&args.plan)?;
    let out = output_dir(args.out);
    std::fs::create_dir_all(&out)?;
    let report = run_experiment(&plan, &out)?;
    println!(
        "plan={} cells={} executed={} skipped={} failed={} out={}",
        plan.name,
        report.outcomes.len(),
        report.executed,
        report.skipped,
        report.failed,
        out.join(&plan.name).display()
    );
    for row in &report.rows {
        println!(
            "  {} fraction={} success_median={:.4} (q1={:.4} q3={:.4}, {} seeds)",
            row.variant,
            row.fraction,
            row.success_median,
            row.success_q1,
            row.success_q3,
            row.seeds_used
        );
    }
    Ok(())
}

/// Plain-text report for a counterexample search.
pub fn render_counterexample_report(
    alpha: f64,
    weights: &[f64],
    budget: usize,
    found: Option<&Counterexample>,
) -> String {
    let mut out = String::new();
    out.push_str("counterexample search: composite-GRPO advantage vs verifier label\n");
    out.push_str(&format!(
        "alpha = {alpha}, weights = {weights:?}, budget = {budget} draws\n"
    ));
    match found {
        None => out.push_str("no counterexample found within budget\n"),
        Some(c) => {
            out.push_str(&format!("found after {} draws\n\n", c.draws_used));
            out.push_str(&format!(
                "{:>4} {:>6} {:>10} {:>12} {:>12} {:>12}\n",
                "i", "label", "aux", "total", "composite", "equal_right"
            ));
            let totals = c.group.totals();
            for (i, (total, aux_row)) in totals.iter().zip(&c.group.aux01).enumerate() {
                let aux = aux_row
                    .iter()
                    .map(|x| format!("{x:.3}"))
                    .collect::<Vec<_>>()
                    .join(",");
                out.push_str(&format!(
                    "{:>4} {:>6} {:>10} {:>12.6} {:>12.6} {:>12.6}{}\n",
                    i,
                    c.group.labels01[i],
                    aux,
                    total,
                    c.composite[i],
                    c.equal_right[i],
                    if i == c.flagged { "  <- flagged" } else { "" }
                ));
            }
            out.push_str(&format!(
                "\ncorrect-class mean total mu_s1 = {:.6} < group mean mu_s = {:.6}\n",
                c.mu_s1, c.mu_s
            ));
            out.push_str(&format!(
                "composite advantage of the correct trajectory: {:.6} (negative)\n",
                c.composite[c.flagged]
            ));
            out.push_str(&format!(
                "equal-right advantage of the same trajectory:  {:.6} (nonnegative)\n",
                c.equal_right[c.flagged]
            ));
        }
    }
    out
}

fn run_counterexample(args: CounterexampleArgs) -> Result<(), CliError> {
    let found = find_counterexample(
        args.alpha,
        &args.weights,
        args.group_size,
        args.seed,
        args.budget,
    )?;
    let report =
        render_counterexample_report(args.alpha, &args.weights, args.budget, found.as_ref());
    match args.out {
        Some(path) => std::fs::write(path, report)?,
        None => print!("{report}"),
    }
    Ok(())
}

fn run_generate(args: GenerateArgs) -> Result<(), CliError> {
    let mixture = TaskMixture {
        kind: args.kind,
        total_count: args.count,
        challenging_fraction: args.challenging_fraction,
        challenging_cutoff: args.cutoff,
        seed: args.seed,
    };
    let tasks = envs::generate_mixture(&mixture)?;
    envs::save_tasks(&args.out, &tasks)?;
    println!("wrote {} tasks to {}", tasks.len(), args.out.display());
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.policy).map_err(|e| CliError::PolicyFile {
        path: args.policy.clone(),
        message: e.to_string(),
    })?;
    let saved: SavedPolicy = serde_json::from_str(&text).map_err(|e| CliError::PolicyFile {
        path: args.policy.clone(),
        message: e.to_string(),
    })?;
    let tasks = envs::load_tasks(&args.tasks)?;
    let cfg = TrainConfig {
        eval_samples: args.samples,
        ..TrainConfig::default()
    };
    let stats = evaluate(&saved.params, &saved.space, &tasks, &cfg, args.seed)?;
    println!(
        "tasks={} samples_per_task={} success_rate={:.4} mean_tokens={:.2} repetition_rate={:.4}",
        tasks.len(),
        args.samples,
        stats.success_rate,
        stats.mean_tokens,
        stats.repetition_rate
    );
    Ok(())
}
