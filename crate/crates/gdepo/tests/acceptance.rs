//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (visible with `--nocapture`).
//!
//! The statistical criteria run the real experiment harness on the frozen
//! desk-scale configuration below; every tolerance is pinned here in code.

use gdepo::advantage::{equal_right_advantage, pass_rate, AdvantageRule, AdvantageVector};
use gdepo::analysis::find_counterexample;
use gdepo::cli::cli_entry;
use gdepo::envs::{self, PolicySpace, TaskKind, TaskSpec};
use gdepo::experiment::{run_experiment, ExperimentPlan, PlanTasks, Variant};
use gdepo::policy::{
    ascent_step, clip_ratio, objective_gradient, surrogate_objective, token_logprobs, ClipConfig,
    Obs, ObjectiveNorm, PolicyFamily, PolicyParams,
};
use gdepo::rewards::{AuxRewardVector, RewardConfig, Token};
use gdepo::rng::stream_rng;
use gdepo::sampling::{dynamic_additional_sampling, Group, Trajectory};
use gdepo::trainer::{train, TrainConfig, TrainMode};
use rand::Rng;

/// Prints the criterion verdict and fails the test on a violation.
fn criterion(name: &str, pass: bool, detail: &str) {
    println!(
        "{}: {name}{}{}",
        if pass { "PASS" } else { "FAIL" },
        if detail.is_empty() { "" } else { " — " },
        detail
    );
    assert!(pass, "criterion failed: {name} {detail}");
}

/// The frozen desk-scale configuration for the statistical criteria.
///
/// The learning rate compensates the per-trajectory `1/(G*T)` objective
/// normalization; repetition carries the auxiliary weight because length
/// differences anti-correlate with correctness on these tasks (wrong early
/// stops are short), which would starve the equal-right magnitudes; the
/// large correctness weight keeps the GRPO fallback's ordering aligned
/// with the verifier.
fn experiment_base() -> TrainConfig {
    let mut base = TrainConfig::default();
    base.group_size = 4;
    base.max_rounds = 3;
    base.extra_iters = 2;
    base.tau = 0.15;
    base.fallback_includes_correctness = true;
    base.lr = 8.0;
    base.epochs = 24;
    base.batch_size = 32;
    base.eval_samples = 32;
    base.reward = RewardConfig {
        alpha: 4.0,
        aux_weights: vec![1.0, 0.0],
        ngram_n: 5,
        length_horizon: 16,
    };
    base
}

fn experiment_tasks() -> PlanTasks {
    PlanTasks {
        kind: TaskKind::ModularChain,
        count: 48,
        holdout_count: 20,
        challenging_cutoff: 1.5e-2,
    }
}

#[test]
fn sign_guarantee() {
    let start = std::time::Instant::now();
    let mut rng = stream_rng(0xace, &[1]);
    let mut checked = 0usize;
    let mut violations = 0usize;
    for _ in 0..10_000 {
        let g = rng.random_range(2..=16);
        let mut labels: Vec<f64> = (0..g)
            .map(|_| if rng.random_range(0..2) == 1 { 1.0 } else { -1.0 })
            .collect();
        // The equal-right branch requires a pass rate at or below the
        // threshold, which a fully correct group can never satisfy.
        if labels.iter().all(|l| *l == 1.0) {
            labels[0] = -1.0;
        }
        let scores: Vec<f64> = (0..g).map(|_| rng.random_range(-3.0..3.0)).collect();
        let c_q = pass_rate(&labels);
        let tau = (c_q + (1.0 - c_q) * rng.random_range(0.01..0.99)).clamp(1e-9, 0.999_999);
        let adv = equal_right_advantage(&labels, &scores, c_q, tau).unwrap();
        assert_eq!(adv.rule, AdvantageRule::EqualRight);
        for (a, l) in adv.values.iter().zip(&labels) {
            checked += 1;
            if a * l < 0.0 {
                violations += 1;
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    criterion(
        "sign guarantee (equal-right advantage agrees with the verifier label)",
        violations == 0 && elapsed < 5.0,
        &format!("{checked} advantages over 10000 groups, {violations} violations, {elapsed:.2}s"),
    );
}

#[test]
fn composite_counterexample() {
    // Direct search: the decomposition identity (1e-12) and the mean-based
    // sign condition are asserted inside the search on every evaluated
    // group; any violation surfaces as an error here.
    let found = find_counterexample(0.3, &[1.0], 3, 0, 1000).unwrap();
    let ok_direct = match &found {
        Some(c) => {
            c.draws_used <= 1000
                && c.composite[c.flagged] < 0.0
                && c.equal_right[c.flagged] >= 0.0
                && c.mu_s1 < c.mu_s
        }
        None => false,
    };

    // The CLI surface produces the same result as a report.
    let dir = tempfile::tempdir().unwrap();
    let report_path = dir.path().join("counterexample.txt");
    let code = cli_entry([
        "gdepo",
        "analyze",
        "counterexample",
        "--alpha",
        "0.3",
        "--budget",
        "1000",
        "--out",
        report_path.to_str().unwrap(),
    ]);
    let report = std::fs::read_to_string(&report_path).unwrap_or_default();
    let ok_cli = code == 0 && report.contains("<- flagged") && report.contains("(negative)");

    criterion(
        "composite-reward counterexample found and fixed by equal right",
        ok_direct && ok_cli,
        &format!(
            "draws_used={}, cli exit {code}",
            found.map(|c| c.draws_used).unwrap_or(0)
        ),
    );
}

/// Trajectory whose per-token ratio under `params` is exactly `rho`,
/// via fabricated old log-probabilities.
fn traj_with_ratio(
    params: &PolicyParams,
    obs: Vec<Obs>,
    tokens: Vec<Token>,
    rho: f64,
) -> Trajectory {
    let lp = token_logprobs(params, &obs, &tokens).unwrap();
    Trajectory {
        old_logprobs: lp.iter().map(|v| v - rho.ln()).collect(),
        tokens,
        obs,
        label: -1.0,
        aux: AuxRewardVector::from_raw(vec![0.0, 0.0]).unwrap(),
    }
}

fn advantage_vector(values: Vec<f64>) -> AdvantageVector {
    AdvantageVector {
        values,
        rule: AdvantageRule::GrpoStandard,
        pass_rate: 0.0,
        threshold: 0.5,
    }
}

fn finite_difference(
    params: &PolicyParams,
    groups: &[Group],
    advs: &[AdvantageVector],
    clip: &ClipConfig,
    norm: ObjectiveNorm,
    h: f64,
) -> Vec<f64> {
    (0..params.dim())
        .map(|k| {
            let mut plus = params.clone();
            plus.theta[k] += h;
            let mut minus = params.clone();
            minus.theta[k] -= h;
            let jp = surrogate_objective(&plus, groups, advs, clip, norm).unwrap();
            let jm = surrogate_objective(&minus, groups, advs, clip, norm).unwrap();
            (jp - jm) / (2.0 * h)
        })
        .collect()
}

#[test]
fn gradient_matches_finite_differences() {
    let start = std::time::Instant::now();
    let clip = ClipConfig::default();
    let mut rng = stream_rng(0x6d, &[2]);
    let mut worst: f64 = 0.0;
    let mut zero_zero_cases = 0usize;
    for case in 0..100 {
        let family = if case % 3 == 0 {
            PolicyFamily::Linear
        } else {
            PolicyFamily::Tabular
        };
        let vocab = rng.random_range(2..=4);
        let dim = rng.random_range(3..=6);
        let mut params = match family {
            PolicyFamily::Tabular => PolicyParams::tabular(dim, vocab),
            PolicyFamily::Linear => PolicyParams::linear(dim, vocab),
        };
        for t in params.theta.iter_mut() {
            *t = rng.random_range(-1.0..1.0);
        }
        let norm = if case % 2 == 0 {
            ObjectiveNorm::PerTrajectory
        } else {
            ObjectiveNorm::GlobalTokens
        };
        let mut trajs = Vec::new();
        let mut values = Vec::new();
        // Every fifth instance is a single fully-clipped trajectory: the
        // objective sits on the clip plateau, so the analytic gradient and
        // the finite differences must both be exactly zero.
        let force_clipped = case % 5 == 0;
        let n_traj = if force_clipped { 1 } else { rng.random_range(2..4usize) };
        for i in 0..n_traj {
            let len = rng.random_range(1..5);
            let obs: Vec<Obs> = (0..len)
                .map(|_| match family {
                    PolicyFamily::Tabular => Obs::one_hot(rng.random_range(0..dim)),
                    PolicyFamily::Linear => Obs::dense(
                        &(0..dim)
                            .map(|_| rng.random_range(-1.0..1.0))
                            .collect::<Vec<_>>(),
                    ),
                })
                .collect();
            let tokens: Vec<Token> = (0..len)
                .map(|_| rng.random_range(0..vocab as u32))
                .collect();
            // Keep the stencil away from the clip kinks so central
            // differences stay on a single branch.
            let rho = if force_clipped && i == 0 {
                1.5 // above the upper bound
            } else {
                loop {
                    let r: f64 = rng.random_range(0.5..1.6);
                    if (r - 0.8).abs() > 1e-3 && (r - 1.28).abs() > 1e-3 {
                        break r;
                    }
                }
            };
            trajs.push(traj_with_ratio(&params, obs, tokens, rho));
            let a = if force_clipped && i == 0 {
                1.0 // advantage-favoring side: plateau, gradient must be 0
            } else {
                rng.random_range(-1.5..1.5)
            };
            values.push(a);
        }
        let groups = vec![Group::from_parts(0, trajs, 1, 1).unwrap()];
        let advs = vec![advantage_vector(values)];
        let analytic = objective_gradient(&params, &groups, &advs, &clip, norm).unwrap();
        let numeric = finite_difference(&params, &groups, &advs, &clip, norm, 1e-5);
        if force_clipped {
            assert!(analytic.iter().all(|g| *g == 0.0));
            assert!(numeric.iter().all(|g| *g == 0.0));
            zero_zero_cases += 1;
        }
        for (a, n) in analytic.iter().zip(&numeric) {
            let scale = a.abs().max(n.abs()).max(1.0);
            worst = worst.max((a - n).abs() / scale);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    criterion(
        "analytic gradient matches central finite differences (h=1e-5)",
        worst <= 1e-4 && elapsed < 30.0,
        &format!(
            "worst relative error {worst:.2e} over 100 instances ({zero_zero_cases} all-clipped), {elapsed:.2}s"
        ),
    );
}

#[test]
fn direction_property() {
    // Trajectories visit disjoint states, so each trajectory's update
    // direction is independent under the one-hot encoding and the
    // per-trajectory sign claim applies as stated.
    let mut rng = stream_rng(0xd1, &[3]);
    let clip = ClipConfig::default();
    let mut checked = 0usize;
    let mut violations = 0usize;
    for _ in 0..100 {
        let vocab = rng.random_range(2..=4);
        let n_traj = rng.random_range(2..=4usize);
        let len = rng.random_range(1..=4usize);
        let mut params = PolicyParams::tabular(n_traj * len, vocab);
        for t in params.theta.iter_mut() {
            *t = rng.random_range(-0.8..0.8);
        }
        let mut trajs = Vec::new();
        let mut values = Vec::new();
        for i in 0..n_traj {
            let obs: Vec<Obs> = (0..len).map(|s| Obs::one_hot(i * len + s)).collect();
            let tokens: Vec<Token> = (0..len)
                .map(|_| rng.random_range(0..vocab as u32))
                .collect();
            trajs.push(traj_with_ratio(&params, obs, tokens, 1.0));
            values.push(match rng.random_range(0..3) {
                0 => rng.random_range(0.05..1.5),
                1 => -rng.random_range(0.05..1.5f64),
                _ => 0.0,
            });
        }
        let group = Group::from_parts(0, trajs, 1, 1).unwrap();
        let before: Vec<f64> = group
            .trajectories
            .iter()
            .map(|t| token_logprobs(&params, &t.obs, &t.tokens).unwrap().iter().sum())
            .collect();
        let groups = vec![group];
        let advs = vec![advantage_vector(values.clone())];
        let grad = objective_gradient(
            &params,
            &groups,
            &advs,
            &clip,
            ObjectiveNorm::PerTrajectory,
        )
        .unwrap();
        let stepped = ascent_step(&params, &grad, 1e-4).unwrap();
        for (i, t) in groups[0].trajectories.iter().enumerate() {
            if values[i] == 0.0 {
                continue;
            }
            let after: f64 = token_logprobs(&stepped, &t.obs, &t.tokens)
                .unwrap()
                .iter()
                .sum();
            checked += 1;
            if (after - before[i]) * values[i] <= 0.0 {
                violations += 1;
            }
        }
    }
    criterion(
        "advantage sign sets the direction of each trajectory's log-probability",
        violations == 0 && checked > 0,
        &format!("{checked} nonzero-advantage trajectories, {violations} sign violations"),
    );
}

#[test]
fn clip_behavior() {
    let cfg = ClipConfig::default();
    let upper_ok = (clip_ratio(1.5, &cfg) - 1.28).abs() < 1e-12;
    let lower_ok = (clip_ratio(0.5, &cfg) - 0.8).abs() < 1e-12;

    // Boundary-straddling constructions: the gradient is exactly zero
    // whenever the clipped branch is selected, and flows otherwise.
    let params = PolicyParams::tabular(1, 2);
    let grad_for = |rho: f64, a: f64| {
        let traj = traj_with_ratio(&params, vec![Obs::one_hot(0)], vec![0], rho);
        let groups = vec![Group::from_parts(0, vec![traj], 1, 1).unwrap()];
        let advs = vec![advantage_vector(vec![a])];
        objective_gradient(
            &params,
            &groups,
            &advs,
            &cfg,
            ObjectiveNorm::PerTrajectory,
        )
        .unwrap()
    };
    let zero = |g: Vec<f64>| g.iter().all(|v| *v == 0.0);
    let clipped_zero = zero(grad_for(1.2801, 1.0))
        && zero(grad_for(2.0, 1.0))
        && zero(grad_for(0.7999, -1.0))
        && zero(grad_for(0.4, -1.0));
    let unclipped_flows = !zero(grad_for(1.2799, 1.0))
        && !zero(grad_for(0.5, 1.0))
        && !zero(grad_for(0.8001, -1.0))
        && !zero(grad_for(1.5, -1.0));

    criterion(
        "asymmetric clip values and zero gradient on the clipped branch",
        upper_ok && lower_ok && clipped_zero && unclipped_flows,
        &format!(
            "clip(1.5)={}, clip(0.5)={}",
            clip_ratio(1.5, &cfg),
            clip_ratio(0.5, &cfg)
        ),
    );
}

/// Bracket task of depth 1 with a two-token budget plus policy parameters
/// tuned so the per-trajectory success probability is exactly 0.1
/// (0.4 for the opening token, 0.25 for the close).
fn bernoulli_tenth_setup() -> (TaskSpec, PolicySpace, PolicyParams) {
    let task = TaskSpec {
        id: 0,
        payload: envs::TaskPayload::BracketProof(envs::BracketPayload { target_depth: 1 }),
        difficulty: 1,
        max_len: 2,
        certificate: vec![0, 1],
    };
    assert!(envs::verify(&task, &task.certificate));
    let space = PolicySpace::for_tasks(std::slice::from_ref(&task)).unwrap();
    let mut params = space.initial_params(PolicyFamily::Tabular);

    let mut cursor = task.start_cursor();
    let s0 = envs::observe(&task, &space, &cursor, PolicyFamily::Tabular).active[0].0;
    task.advance(&mut cursor, 0); // open bracket
    let s1 = envs::observe(&task, &space, &cursor, PolicyFamily::Tabular).active[0].0;
    params.theta[s0 * 2] = (0.4f64).ln();
    params.theta[s0 * 2 + 1] = (0.6f64).ln();
    params.theta[s1 * 2] = (0.75f64).ln();
    params.theta[s1 * 2 + 1] = (0.25f64).ln();
    (task, space, params)
}

#[test]
fn dynamic_sampling_statistics() {
    let start = std::time::Instant::now();
    let (task, space, params) = bernoulli_tenth_setup();
    let p = envs::enumerate_success_probability(&task, &space, &params).unwrap();
    let p_exact_ok = (p - 0.1).abs() < 1e-12;

    let (g, n, runs) = (4usize, 3usize, 20_000usize);
    let reward = RewardConfig::default();
    let mut successes = 0usize;
    let mut histogram = vec![0usize; n];
    for seed in 0..runs as u64 {
        let group =
            dynamic_additional_sampling(&params, &space, &task, g, n, &reward, seed).unwrap();
        successes += group.has_success as usize;
        histogram[group.rounds_used - 1] += 1;
    }

    // Closed-form oracle: per-round group success q = 1 - (1-p)^G; the
    // round count is geometric truncated at n, and overall success is
    // 1 - (1-p)^(G*n).
    let q = 1.0 - (1.0 - p).powi(g as i32);
    let overall = 1.0 - (1.0 - p).powi((g * n) as i32);
    let freq = successes as f64 / runs as f64;
    let sigma = (overall * (1.0 - overall) / runs as f64).sqrt();
    let freq_ok = (freq - overall).abs() <= 3.0 * sigma;

    let mut bins_ok = true;
    let mut detail = format!("p={p:.6}, success {freq:.4} vs {overall:.4} (3s={:.4})", 3.0 * sigma);
    for k in 1..=n {
        let expected = if k < n {
            (1.0 - q).powi(k as i32 - 1) * q
        } else {
            (1.0 - q).powi(n as i32 - 1)
        };
        let observed = histogram[k - 1] as f64 / runs as f64;
        let bin_sigma = (expected * (1.0 - expected) / runs as f64).sqrt();
        if (observed - expected).abs() > 3.0 * bin_sigma {
            bins_ok = false;
        }
        detail.push_str(&format!("; k={k}: {observed:.4} vs {expected:.4}"));
    }
    let elapsed = start.elapsed().as_secs_f64();
    criterion(
        "dynamic sampling matches the truncated-geometric oracle",
        p_exact_ok && freq_ok && bins_ok && elapsed < 60.0,
        &format!("{detail}; {elapsed:.1}s"),
    );
}

#[test]
fn iteration_ledger() {
    let mut cfg = experiment_base();
    cfg.mode = TrainMode::Gdepo;
    cfg.extra_iters = 3;
    cfg.epochs = 4;
    cfg.seed = 11;
    let tasks = envs::generate_mixture(&envs::TaskMixture::new(TaskKind::ModularChain, 24, 0.5, 4))
        .unwrap();
    let holdout =
        envs::generate_mixture(&envs::TaskMixture::new(TaskKind::ModularChain, 8, 0.5, 5)).unwrap();
    let run = train(&cfg, &tasks, &holdout).unwrap();

    let mut groups = std::collections::BTreeMap::new();
    for step in run.metrics.steps() {
        groups.insert(
            (step.epoch, step.batch, step.query_id),
            (step.has_success, step.rounds_used),
        );
    }
    let expected: usize = groups
        .values()
        .map(|(success, rounds)| {
            if *success && *rounds > 1 {
                cfg.extra_iters
            } else {
                1
            }
        })
        .sum();
    let total = run.metrics.total_ascent_steps();
    let resampled = groups
        .values()
        .filter(|(success, rounds)| *success && *rounds > 1)
        .count();
    criterion(
        "ascent-step ledger is exact",
        total == expected && resampled > 0,
        &format!("{total} steps over {} groups ({resampled} resampled successes, m={})", groups.len(), cfg.extra_iters),
    );
}

/// Median over paired per-seed differences (same seed, same tasks).
fn paired_median_gap(
    report: &gdepo::experiment::ExperimentReport,
    seeds: &[u64],
    fraction: f64,
    a: &str,
    b: &str,
) -> f64 {
    let mut diffs: Vec<f64> = seeds
        .iter()
        .map(|&s| {
            let find = |name: &str| {
                report
                    .outcomes
                    .iter()
                    .find(|o| {
                        o.variant == name && o.seed == s && (o.fraction - fraction).abs() < 1e-9
                    })
                    .expect("cell present")
                    .final_success
            };
            find(a) - find(b)
        })
        .collect();
    diffs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let n = diffs.len();
    if n % 2 == 1 {
        diffs[n / 2]
    } else {
        (diffs[n / 2 - 1] + diffs[n / 2]) / 2.0
    }
}

#[test]
fn trend_over_challenging_fractions() {
    let start = std::time::Instant::now();
    let seeds: Vec<u64> = (0..12).collect();
    let plan = ExperimentPlan {
        name: "acceptance-trend".into(),
        seeds: seeds.clone(),
        fractions: vec![0.1, 0.3, 0.5],
        variants: vec![
            Variant::named("grpo_binary", TrainMode::GrpoBinary),
            Variant::named("gdepo", TrainMode::Gdepo),
        ],
        base: experiment_base(),
        tasks: experiment_tasks(),
    };
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&plan, dir.path()).unwrap();
    assert_eq!(report.failed, 0);

    let gap = |f: f64| paired_median_gap(&report, &seeds, f, "gdepo", "grpo_binary");
    let (g1, g3, g5) = (gap(0.1), gap(0.3), gap(0.5));
    let elapsed = start.elapsed().as_secs_f64();
    criterion(
        "held-out success gap grows with the challenging fraction",
        g1 >= 0.0 && g3 >= 0.0 && g5 >= 0.0 && g5 > g1 && elapsed < 600.0,
        &format!("median gaps {g1:+.3} @0.1, {g3:+.3} @0.3, {g5:+.3} @0.5 over 12 seeds; {elapsed:.0}s"),
    );
}

#[test]
fn ablation_ordering() {
    let start = std::time::Instant::now();
    let plan = ExperimentPlan {
        name: "acceptance-ablation".into(),
        seeds: (0..12).collect(),
        fractions: vec![0.3],
        variants: vec![
            Variant::with_toggles("baseline", TrainMode::GrpoBinary, false, false),
            Variant::with_toggles("das", TrainMode::GrpoBinary, true, false),
            Variant::with_toggles("era", TrainMode::Gdepo, false, false),
            Variant::with_toggles("das_dai", TrainMode::GrpoBinary, true, true),
            Variant::with_toggles("full", TrainMode::Gdepo, true, true),
        ],
        base: experiment_base(),
        tasks: experiment_tasks(),
    };
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&plan, dir.path()).unwrap();
    assert_eq!(report.failed, 0);

    let median = |name: &str| report.row(name, 0.3).expect("row").success_median;
    let full = median("full");
    let partials = [
        ("baseline", median("baseline")),
        ("das", median("das")),
        ("era", median("era")),
        ("das_dai", median("das_dai")),
    ];
    let ordered = partials.iter().all(|(_, v)| full >= *v);
    let elapsed = start.elapsed().as_secs_f64();
    criterion(
        "full configuration matches or beats every partial configuration",
        ordered && elapsed < 600.0,
        &format!(
            "full {full:.3} vs baseline {:.3}, das {:.3}, era {:.3}, das+dai {:.3}; {elapsed:.0}s",
            partials[0].1, partials[1].1, partials[2].1, partials[3].1
        ),
    );
}

#[test]
fn byte_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("run.toml");
    std::fs::write(
        &config_path,
        r#"
[train]
mode = "gdepo"
group_size = 4
max_rounds = 3
extra_iters = 2
epochs = 2
lr = 8.0
seed = 123
eval_samples = 8

[tasks]
kind = "modular_chain"
count = 10
holdout_count = 4
challenging_fraction = 0.3
"#,
    )
    .unwrap();

    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let code = cli_entry([
            "gdepo",
            "train",
            "--config",
            config_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
    }
    let mut identical = true;
    let mut detail = String::new();
    for file in ["metrics.jsonl", "summary.csv", "policy.json"] {
        let a = std::fs::read(out_a.join(file)).unwrap();
        let b = std::fs::read(out_b.join(file)).unwrap();
        let same = a == b;
        identical &= same;
        detail.push_str(&format!("{file}: {} bytes {}; ", a.len(), if same { "==" } else { "!=" }));
    }
    criterion(
        "repeated train runs produce byte-identical metrics files",
        identical,
        &detail,
    );
}
