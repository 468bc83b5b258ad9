//! Acceptance checks. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use pmtl_core::data::train_sets;
use pmtl_core::objectives::{
    empirical_grad, empirical_loss, local_objective, local_objective_grad, Batch, ModelFamily,
    ModelSpec,
};
use pmtl_core::oracles::{finite_diff_grad, mean_estimation_bound, QuadraticInstance};
use pmtl_core::privacy::{
    certify_sigma, default_alpha_grid, rdp_gaussian, rdp_subsampled_gaussian, sigma_for_epsilon,
    MechanismEvent, PrivacyLedger, SensitivityConvention,
};
use pmtl_core::rng::{Purpose, Streams};
use pmtl_core::solvers::{run_fedprox, run_global_with, run_local_only, run_pmtl, GlobalLocalRule, RunOptions};
use pmtl_core::{BatchSize, FederationConfig, ParamVector, TaskDataset};
use pmtl_harness::experiment::{
    federation_for, load_federation, model_spec, run_experiment, run_solver, SolverKind, SweepReport,
};
use pmtl_harness::probe::{probe_sensitivity, ProbeSettings};
use pmtl_harness::synthetic::{generate_synthetic, SyntheticSpec};
use pmtl_harness::trace_csv::read_trace;
use pmtl_harness::ExperimentConfig;
use rand::Rng;

/// Outcome of one criterion: pass flag and a short detail string.
type Outcome = (bool, String);

fn rng(tag: u64) -> pmtl_core::rng::ChaCha20Rng {
    Streams::new(20_240_601).stream(Purpose::Auxiliary, tag, 0)
}

fn run_cli(args: &[&str], out: Option<&Path>) -> std::process::Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pmtl"));
    cmd.args(args);
    if let Some(dir) = out {
        cmd.env("PMTL_OUTPUT_DIR", dir);
    }
    cmd.output().expect("pmtl binary runs")
}

fn stdout_value(out: &std::process::Output, key: &str) -> Option<f64> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")).map(str::to_string))
        .and_then(|v| v.parse().ok())
}

fn closed_form_calibration() -> Outcome {
    let mut cfg = FederationConfig::new(100);
    cfg.gamma = 1.0;
    cfg.rounds = 100;
    cfg.delta = 0.01;
    let sigma = sigma_for_epsilon(1.0, &cfg).unwrap();
    let certified = certify_sigma(sigma, &cfg).unwrap();

    let args = ["--tasks", "100", "--sampled", "100", "--gamma", "1", "--rounds", "100", "--delta", "0.01"];
    let mut cal = vec!["calibrate", "--epsilon", "1"];
    cal.extend(args);
    let out = run_cli(&cal, None);
    let cli_sigma = stdout_value(&out, "sigma").unwrap_or(f64::NAN);
    let sigma_text = cli_sigma.to_string();
    let mut cert = vec!["certify", "--sigma", sigma_text.as_str()];
    cert.extend(args);
    let cli_eps = stdout_value(&run_cli(&cert, None), "epsilon").unwrap_or(f64::NAN);

    let rel = (sigma - 0.85843).abs() / 0.85843;
    let pass = rel <= 1e-4 && certified <= 1.05 && cli_sigma == sigma && cli_eps <= 1.05;
    (
        pass,
        format!("sigma {sigma:.7} (rel err {rel:.1e}), certified eps {certified:.4}, cli sigma {cli_sigma}, cli eps {cli_eps:.4}"),
    )
}

fn ledger(z: f64, p: f64, count: usize, grid: Option<Vec<f64>>) -> PrivacyLedger {
    let mut l = match grid {
        Some(g) => PrivacyLedger::with_alpha_grid(1e-5, SensitivityConvention::Standard, g).unwrap(),
        None => PrivacyLedger::new(1e-5, SensitivityConvention::Standard).unwrap(),
    };
    l.push(MechanismEvent::new(z, p, count).unwrap());
    l
}

fn accountant_properties() -> Outcome {
    let mut worst_reduction = 0.0f64;
    for alpha in 2..=256u32 {
        for z in [0.1, 0.5, 1.0, 2.0, 8.0, 50.0] {
            let d = (rdp_subsampled_gaussian(alpha, z, 1.0) - rdp_gaussian(f64::from(alpha), z)).abs();
            worst_reduction = worst_reduction.max(d);
        }
    }
    let mut r = rng(2);
    let mut monotone_failures = 0;
    for _ in 0..200 {
        let z = r.random_range(0.3..30.0);
        let p = r.random_range(0.005..1.0);
        let count = r.random_range(1..500);
        let base = ledger(z, p, count, None).epsilon().unwrap();
        let more_noise = ledger(z * r.random_range(1.0..3.0), p, count, None).epsilon().unwrap();
        let more_rounds = ledger(z, p, count + r.random_range(1..500), None).epsilon().unwrap();
        let subset: Vec<f64> = default_alpha_grid().into_iter().step_by(r.random_range(2..40)).collect();
        let coarse = ledger(z, p, count, Some(subset)).epsilon().unwrap();
        if more_noise > base + 1e-12 || more_rounds < base - 1e-12 || base > coarse + 1e-12 {
            monotone_failures += 1;
        }
    }
    let mut worst_ratio = 0.0f64;
    let mut bisection_ratio = f64::INFINITY;
    for i in 0..20 {
        let m = r.random_range(2..1000);
        let mut cfg = FederationConfig::new(m);
        cfg.gamma = r.random_range(0.05..5.0);
        cfg.rounds = r.random_range(1..1000);
        cfg.delta = r.random_range(1e-6..0.5);
        let eps = r.random_range(0.05..10.0);
        let sigma = sigma_for_epsilon(eps, &cfg).unwrap();
        worst_ratio = worst_ratio.max(certify_sigma(sigma, &cfg).unwrap() / eps);
        if i % 2 == 0 && m > 2 {
            cfg.sampled = r.random_range(1..m);
            let sigma = sigma_for_epsilon(eps, &cfg).unwrap();
            let ratio = certify_sigma(sigma, &cfg).unwrap() / eps;
            worst_ratio = worst_ratio.max(ratio);
            bisection_ratio = bisection_ratio.min(ratio);
        }
    }
    let pass = worst_reduction <= 1e-9 && monotone_failures == 0 && worst_ratio <= 1.05 && bisection_ratio >= 0.95;
    (
        pass,
        format!(
            "p=1 max diff {worst_reduction:.1e}, monotonicity failures {monotone_failures}/200, \
             max certified/target {worst_ratio:.4}, min bisection ratio {bisection_ratio:.4}"
        ),
    )
}

fn gradient_oracle() -> Outcome {
    let width = 4;
    let fed = generate_synthetic(
        &SyntheticSpec {
            tasks: 1,
            examples_per_task: 15,
            feature_dim: width,
            ..SyntheticSpec::default()
        },
        1,
    )
    .unwrap();
    let classes = fed.tasks[0].clone();
    let mut r = rng(3);
    let regression = TaskDataset::new(
        0,
        classes
            .examples()
            .iter()
            .map(|e| {
                let mut e = e.clone();
                e.label = r.random_range(-2.0..2.0);
                e
            })
            .collect(),
    )
    .unwrap();
    let mut worst = 0.0f64;
    for family in [
        ModelFamily::SquaredErrorMean,
        ModelFamily::LinearRegression,
        ModelFamily::LogisticRegression,
        ModelFamily::Mlp { hidden: 6 },
    ] {
        let spec = ModelSpec::new(family, width);
        let data = if spec.is_classifier() { &classes } else { &regression };
        for _ in 0..20 {
            let random = |r: &mut pmtl_core::rng::ChaCha20Rng| {
                ParamVector::new((0..spec.dim()).map(|_| r.random_range(-1.5..1.5)).collect()).unwrap()
            };
            let w = random(&mut r);
            let anchor = random(&mut r);
            let rel = |a: ParamVector, b: ParamVector| a.sub(&b).unwrap().l2_norm() / b.l2_norm().max(1.0);
            let plain = rel(
                empirical_grad(&spec, &w, Batch::full(data)).unwrap(),
                finite_diff_grad(|v| empirical_loss(&spec, v, data).unwrap(), &w, 1e-6),
            );
            let local = rel(
                local_objective_grad(&spec, &w, &anchor, Batch::full(data), 0.7).unwrap(),
                finite_diff_grad(|v| local_objective(&spec, v, &anchor, data, 0.7).unwrap(), &w, 1e-6),
            );
            worst = worst.max(plain).max(local);
        }
    }
    (worst <= 1e-5, format!("4 families x 20 points, max relative error {worst:.2e}"))
}

fn quadratic_fixed_point() -> Outcome {
    let (m, d) = (8, 4);
    let mut r = rng(4);
    let points: Vec<Vec<Vec<f64>>> = (0..m)
        .map(|_| {
            let n = r.random_range(1..6);
            let centre: Vec<f64> = (0..d).map(|_| r.random_range(-3.0..3.0)).collect();
            (0..n)
                .map(|_| centre.iter().map(|c| c + r.random_range(-1.0..1.0)).collect())
                .collect()
        })
        .collect();
    let lambda = 2.0;
    let instance = QuadraticInstance::new(points.clone(), lambda).unwrap();
    let (w_star, _) = instance.fixed_point().unwrap();
    let optimum = instance.objective(&w_star);

    let spec = ModelSpec::new(ModelFamily::SquaredErrorMean, d);
    let train: Vec<TaskDataset> = points
        .iter()
        .enumerate()
        .map(|(k, p)| TaskDataset::from_points(k, p).unwrap())
        .collect();
    let smoothness = train
        .iter()
        .map(|t| spec.curvature(t).unwrap().smoothness)
        .fold(0.0, f64::max);
    let mut cfg = FederationConfig::new(m);
    cfg.lambda = lambda;
    cfg.local_steps = 1;
    cfg.rounds = 500;
    cfg.gamma = f64::INFINITY;
    cfg.eta = 1.0 / (2.0 * (smoothness + lambda));
    let out = run_pmtl(&spec, &cfg, &train).unwrap();
    let reached = instance.objective(&out.models.iter().map(|w| w.as_slice().to_vec()).collect::<Vec<_>>());
    let gap = (reached - optimum).abs();
    (gap <= 1e-3, format!("objective {reached:.9} vs optimum {optimum:.9}, gap {gap:.2e}"))
}

fn reductions() -> Outcome {
    let fed = generate_synthetic(
        &SyntheticSpec {
            tasks: 12,
            examples_per_task: 30,
            feature_dim: 5,
            ..SyntheticSpec::default()
        },
        5,
    )
    .unwrap();
    let train = train_sets(&fed.splits);
    let spec = ModelSpec::new(ModelFamily::LogisticRegression, 5);
    let mut cfg = FederationConfig::new(12);
    cfg.lambda = 0.0;
    cfg.rounds = 6;
    cfg.local_steps = 4;
    cfg.seed = 9;

    // Independent local SGD: a plain gradient loop per task from the same starting model.
    let pmtl = run_pmtl(&spec, &cfg, &train).unwrap();
    let streams = Streams::new(cfg.seed);
    let independent: Vec<ParamVector> = (0..12)
        .map(|k| {
            let mut w = spec.init_params(&mut streams.init(k));
            for _ in 0..cfg.rounds * cfg.local_steps {
                let g = empirical_grad(&spec, &w, Batch::full(&train[k])).unwrap();
                w.axpy(-cfg.eta, &g).unwrap();
            }
            w
        })
        .collect();
    let local_only = run_local_only(&spec, &cfg, &train).unwrap();
    let pmtl_is_local = pmtl.models == independent && pmtl.models == local_only.models;

    let mut private = cfg.clone();
    private.sampled = 5;
    private.sigma = 0.05;
    private.gamma = 0.5;
    private.batch_size = BatchSize::Fixed(8);
    let fedavg = run_global_with(&spec, &private, &train, GlobalLocalRule::Plain, true, RunOptions::default()).unwrap();
    let fedprox = run_fedprox(&spec, &private, &train, 0.0, true).unwrap();
    let prox_is_avg = fedavg.global == fedprox.global && fedavg.trace == fedprox.trace;

    let dir = tempfile::tempdir().unwrap();
    let args = [
        "--set", "federation.m=20", "--set", "federation.q=7", "--set", "federation.sigma=0.1",
        "--set", "federation.rounds=4", "--set", "federation.batch_size=8", "train", "--seed", "3",
    ];
    let a = run_cli(&args, Some(&dir.path().join("a")));
    let b = run_cli(&args, Some(&dir.path().join("b")));
    let file = "train_pmtl_seed3.csv";
    let bytes = |sub: &str| std::fs::read(dir.path().join(sub).join(file)).unwrap_or_default();
    let deterministic = a.status.success()
        && b.status.success()
        && !bytes("a").is_empty()
        && bytes("a") == bytes("b")
        && run_pmtl(&spec, &private, &train).unwrap() == run_pmtl(&spec, &private, &train).unwrap();

    (
        pmtl_is_local && prox_is_avg && deterministic,
        format!("pmtl==local sgd: {pmtl_is_local}, fedprox(mu=0)==fedavg: {prox_is_avg}, rerun bitwise equal: {deterministic}"),
    )
}

fn naive_dp_collapse() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.federation.epsilon_target = Some(1.0);
    let (mut pmtl, mut naive, mut worst_eps) = (0.0, 0.0, 0.0f64);
    let seeds = 5;
    for seed in 0..seeds {
        let splits = load_federation(&cfg, seed).unwrap();
        let mut fed = federation_for(&cfg, &splits).unwrap();
        fed.seed = seed;
        let spec = model_spec(cfg.family, &splits);
        let p = run_solver(SolverKind::Pmtl, &spec, &fed, &splits, cfg.fedprox_mu()).unwrap();
        let n = run_solver(SolverKind::NaiveDp, &spec, &fed, &splits, cfg.fedprox_mu()).unwrap();
        pmtl += p.test_acc.unwrap() / seeds as f64;
        naive += n.test_acc.unwrap() / seeds as f64;
        worst_eps = worst_eps.max(p.epsilon).max(n.epsilon);
    }
    let pass = (naive - 0.5).abs() <= 0.05 && pmtl >= 0.65 && worst_eps <= 1.0;
    (
        pass,
        format!("naive DP acc {naive:.4}, PMTL acc {pmtl:.4}, max certified eps {worst_eps:.4} (m=100, n_k=50, h=2, 5 seeds)"),
    )
}

fn sweep_into(out: &Path, solvers: Option<Vec<SolverKind>>) -> SweepReport {
    let mut cfg = ExperimentConfig::default();
    cfg.sweep.epsilon = vec![0.1, 0.4, 0.8, 2.0];
    if let Some(solvers) = solvers {
        cfg.solvers = solvers;
    }
    run_experiment(&cfg, out).unwrap()
}

fn privacy_utility_advantage() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let report = sweep_into(dir.path(), Some(vec![SolverKind::Pmtl, SolverKind::FedAvg]));
    let acc = |solver: SolverKind, eps: f64| {
        report
            .summary
            .iter()
            .find(|r| r.solver == solver && r.target_epsilon == eps)
            .and_then(|r| r.selected.as_ref())
            .map(|s| (s.test_acc_mean, s.epsilon))
    };
    let mut pass = true;
    let mut gaps = Vec::new();
    for eps in [0.1, 0.4, 0.8, 2.0] {
        match (acc(SolverKind::Pmtl, eps), acc(SolverKind::FedAvg, eps)) {
            (Some((p, pe)), Some((f, fe))) => {
                pass &= p >= f && pe <= eps && fe <= eps;
                gaps.push(p - f);
            }
            _ => {
                pass = false;
                gaps.push(f64::NAN);
            }
        }
    }
    pass &= gaps[0] >= gaps[3] - 0.02;
    let shown: Vec<String> = gaps.iter().map(|g| format!("{g:.4}")).collect();
    (pass, format!("PMTL - FedAvg test acc at eps 0.1/0.4/0.8/2.0: {}", shown.join("/")))
}

fn trace_properties() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let report = sweep_into(dir.path(), None);
    let mut files = 0;
    let mut bad_eps = 0;
    for entry in std::fs::read_dir(dir.path().join("traces")).unwrap() {
        let rows = read_trace(&entry.unwrap().path()).unwrap();
        files += 1;
        if rows.windows(2).any(|w| w[1].epsilon_spent < w[0].epsilon_spent) {
            bad_eps += 1;
        }
    }
    let no_descent = |solver: SolverKind| {
        let runs: Vec<_> = report.runs.iter().filter(|r| r.solver == solver).collect();
        let bad = runs.iter().filter(|r| !(r.final_train_loss < r.initial_train_loss)).count();
        (bad, runs.len())
    };
    let (pmtl_bad, pmtl_runs) = no_descent(SolverKind::Pmtl);
    // Private global baselines are reported, not gated: their shared model
    // stays near chance on this federation and noise can outweigh the drift.
    let others: Vec<String> = report
        .runs
        .iter()
        .map(|r| r.solver)
        .filter(|s| *s != SolverKind::Pmtl)
        .fold(Vec::new(), |mut seen, s| {
            if !seen.contains(&s) {
                seen.push(s);
            }
            seen
        })
        .into_iter()
        .map(|s| {
            let (bad, n) = no_descent(s);
            format!("{s} {bad}/{n}")
        })
        .collect();
    let pass = files == report.runs.len() && pmtl_runs > 0 && bad_eps == 0 && pmtl_bad == 0;
    (
        pass,
        format!(
            "{files} traces, {bad_eps} with decreasing epsilon; PMTL runs without loss decrease {pmtl_bad}/{pmtl_runs} \
             (baselines, not gated: {})",
            others.join(", ")
        ),
    )
}

fn sensitivity_probe() -> Outcome {
    let report = probe_sensitivity(&ProbeSettings::default()).unwrap();
    let r = report.report;
    let pass = r.trials == 10_000 && !r.conservative_bound_violated() && r.standard_bound_violated();
    (
        pass,
        format!(
            "max diff {:.6} over {} trials; gamma/m = {}, 2gamma/m = {}; gamma/m bound violated (reported): {}",
            r.max_difference,
            r.trials,
            r.standard_bound,
            r.conservative_bound,
            r.standard_bound_violated()
        ),
    )
}

fn mean_estimation_lower_bound() -> Outcome {
    let mut r = rng(10);
    let mut violations = 0;
    for _ in 0..1000 {
        let m = r.random_range(1..40);
        let x: Vec<f64> = (0..m).map(|_| r.random_range(-10.0..10.0)).collect();
        let w: Vec<f64> = (0..m).map(|_| r.random_range(-10.0..10.0)).collect();
        let (objective, bound) = mean_estimation_bound(&x, &w);
        if objective < bound - 1e-12 * bound.max(1.0) {
            violations += 1;
        }
        let instance = QuadraticInstance::new(x.iter().map(|v| vec![vec![*v]]).collect(), r.random_range(0.0..10.0)).unwrap();
        let (w_star, _) = instance.fixed_point().unwrap();
        let flat: Vec<f64> = w_star.iter().map(|w| w[0]).collect();
        let (objective, bound) = mean_estimation_bound(&x, &flat);
        if objective < bound - 1e-12 * bound.max(1.0) {
            violations += 1;
        }
    }
    (violations == 0, format!("{violations} violations over 1000 random instances (random and optimal W)"))
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    check: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "closed-form calibration", limit: Duration::from_secs(1), check: closed_form_calibration },
        Criterion { id: 2, name: "accountant properties", limit: Duration::from_secs(10), check: accountant_properties },
        Criterion { id: 3, name: "gradient oracle", limit: Duration::from_secs(5), check: gradient_oracle },
        Criterion { id: 4, name: "quadratic fixed point", limit: Duration::from_secs(5), check: quadratic_fixed_point },
        Criterion { id: 5, name: "reductions and determinism", limit: Duration::from_secs(10), check: reductions },
        Criterion { id: 6, name: "naive DP collapse", limit: Duration::from_secs(180), check: naive_dp_collapse },
        Criterion { id: 7, name: "privacy-utility advantage", limit: Duration::from_secs(600), check: privacy_utility_advantage },
        Criterion { id: 8, name: "trace monotonicity and descent", limit: Duration::from_secs(120), check: trace_properties },
        Criterion { id: 9, name: "sensitivity probe", limit: Duration::from_secs(30), check: sensitivity_probe },
        Criterion { id: 10, name: "mean-estimation lower bound", limit: Duration::from_secs(5), check: mean_estimation_lower_bound },
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for c in criteria.iter().filter(|c| filter.is_empty() || filter.contains(&c.id)) {
        ran += 1;
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.check));
        let elapsed = start.elapsed();
        let (ok, detail) = match result {
            Ok((ok, detail)) => (ok, detail),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        let in_time = elapsed <= c.limit;
        let pass = ok && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<32} {} [{:.2}s / limit {}s] {}{}",
            c.id,
            c.name,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            c.limit.as_secs(),
            detail,
            if in_time { "" } else { " (over time limit)" }
        );
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
