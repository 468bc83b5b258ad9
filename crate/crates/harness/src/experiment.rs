//! Single training runs and the validation-selected privacy sweep.

use std::fmt;
use std::path::Path;

use pmtl_core::data::{split_sets, train_sets, Split, TaskSplits};
use pmtl_core::objectives::{ModelFamily, ModelSpec};
use pmtl_core::privacy::MechanismSchedule;
use pmtl_core::solvers::{
    evaluate, finetune, mean_accuracy, mean_loss, run_global_with, run_local_only_with,
    run_naive_dp_mtl_with, run_pmtl_with, GlobalLocalRule, RunOptions,
};
use pmtl_core::{FederationConfig, ParamVector, RunTrace, SolverOutput, Streams};
use rayon::prelude::*;

use crate::config::{DataSource, ExperimentConfig, FinetuneSettings};
use crate::error::{HarnessError, Result};
use crate::ingest::load_task_directory;
use crate::synthetic::generate_synthetic;
use crate::trace_csv::write_trace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverKind {
    Pmtl,
    /// Private FedAvg.
    FedAvg,
    /// Private FedProx.
    FedProx,
    NaiveDp,
    LocalOnly,
    /// FedAvg without clipping or noise.
    FedAvgPlain,
}

impl SolverKind {
    pub const ALL: [SolverKind; 6] = [
        SolverKind::Pmtl,
        SolverKind::FedAvg,
        SolverKind::FedProx,
        SolverKind::NaiveDp,
        SolverKind::LocalOnly,
        SolverKind::FedAvgPlain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Pmtl => "pmtl",
            SolverKind::FedAvg => "fedavg",
            SolverKind::FedProx => "fedprox",
            SolverKind::NaiveDp => "naive_dp",
            SolverKind::LocalOnly => "local",
            SolverKind::FedAvgPlain => "fedavg_nonprivate",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
                HarnessError::Config(format!("unknown solver `{s}` (one of {})", names.join(", ")))
            })
    }

    /// Whether clipping and noise parameters affect the run.
    pub fn uses_privacy_grid(self) -> bool {
        !matches!(self, SolverKind::LocalOnly | SolverKind::FedAvgPlain)
    }

    /// Epsilon certified for running this solver under `config`, without training.
    pub fn certified_epsilon(self, config: &FederationConfig) -> Result<f64> {
        Ok(match self {
            SolverKind::LocalOnly => 0.0,
            SolverKind::FedAvgPlain => f64::INFINITY,
            SolverKind::NaiveDp => MechanismSchedule::joint_model(config).epsilon(config.sigma)?,
            _ => MechanismSchedule::aggregation(config).epsilon(config.sigma)?,
        })
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Loads or generates the federation for one seed and splits it 80/10/10.
pub fn load_federation(config: &ExperimentConfig, seed: u64) -> Result<Vec<TaskSplits>> {
    match &config.data {
        DataSource::Synthetic => Ok(generate_synthetic(&config.synthetic, seed)?.splits),
        DataSource::Directory(dir) => {
            let tasks = load_task_directory(dir)?;
            let streams = Streams::new(seed);
            Ok(tasks
                .iter()
                .map(|t| TaskSplits::split(t, &streams))
                .collect::<pmtl_core::Result<_>>()?)
        }
    }
}

/// Federation settings adjusted to the number of loaded tasks.
pub fn federation_for(config: &ExperimentConfig, splits: &[TaskSplits]) -> Result<FederationConfig> {
    let m = splits.len();
    let mut fed = config.federation.clone();
    if fed.tasks != m {
        if config.was_set("federation.m") {
            return Err(HarnessError::Config(format!(
                "federation.m = {} but the data has {m} tasks",
                fed.tasks
            )));
        }
        fed.tasks = m;
        if !config.was_set("federation.q") {
            fed.sampled = m;
        }
        if !config.was_set("federation.delta") {
            fed.delta = FederationConfig::new(m).delta;
        }
        fed.validate()?;
    }
    Ok(fed)
}

pub fn model_spec(family: ModelFamily, splits: &[TaskSplits]) -> ModelSpec {
    ModelSpec::new(family, splits[0].train.width())
}

/// One trained and evaluated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub solver: SolverKind,
    pub gamma: f64,
    pub sigma: f64,
    pub rounds: usize,
    pub seed: u64,
    /// Epsilon certified by the run's ledger.
    pub epsilon: f64,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub test_loss: Option<f64>,
    pub trace: RunTrace,
    pub models: Vec<ParamVector>,
}

/// Trains `solver` on the train splits; validation accuracy is traced when
/// every task has a validation split.
pub fn run_solver(
    solver: SolverKind,
    spec: &ModelSpec,
    federation: &FederationConfig,
    splits: &[TaskSplits],
    fedprox_mu: f64,
) -> Result<RunResult> {
    let train = train_sets(splits);
    let val = split_sets(splits, Split::Val).ok();
    let options = RunOptions {
        val: val.as_deref(),
        ..RunOptions::default()
    };
    let output: SolverOutput = match solver {
        SolverKind::Pmtl => run_pmtl_with(spec, federation, &train, options)?,
        SolverKind::FedAvg => run_global_with(spec, federation, &train, GlobalLocalRule::Plain, true, options)?,
        SolverKind::FedAvgPlain => {
            run_global_with(spec, federation, &train, GlobalLocalRule::Plain, false, options)?
        }
        SolverKind::FedProx => run_global_with(
            spec,
            federation,
            &train,
            GlobalLocalRule::Proximal { mu: fedprox_mu },
            true,
            options,
        )?,
        SolverKind::NaiveDp => run_naive_dp_mtl_with(spec, federation, &train, options)?,
        SolverKind::LocalOnly => run_local_only_with(spec, federation, &train, options)?,
    };
    let (val_acc, _) = score(spec, &output.models, splits, Split::Val);
    let (test_acc, test_loss) = score(spec, &output.models, splits, Split::Test);
    Ok(RunResult {
        solver,
        gamma: federation.gamma,
        sigma: output.sigma,
        rounds: federation.rounds,
        seed: federation.seed,
        epsilon: output.trace.final_epsilon(),
        val_acc,
        test_acc,
        test_loss,
        trace: output.trace,
        models: output.models,
    })
}

/// Mean accuracy and loss on a split, or `None` when the split is missing.
pub fn score(
    spec: &ModelSpec,
    models: &[ParamVector],
    splits: &[TaskSplits],
    split: Split,
) -> (Option<f64>, Option<f64>) {
    match evaluate(spec, models, splits, split) {
        Ok(metrics) => (mean_accuracy(&metrics), Some(mean_loss(&metrics))),
        Err(_) => (None, None),
    }
}

/// Finetunes each task's released model (or the broadcast global model) on its
/// own training split. Local only, so the privacy guarantee is unchanged.
pub fn finetune_models(
    spec: &ModelSpec,
    models: &[ParamVector],
    splits: &[TaskSplits],
    settings: &FinetuneSettings,
    federation: &FederationConfig,
) -> Result<Vec<ParamVector>> {
    let streams = Streams::new(federation.seed);
    splits
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let start = if models.len() == 1 { &models[0] } else { &models[k] };
            Ok(finetune(
                spec,
                start,
                &s.train,
                settings.method,
                settings.steps,
                settings.eta,
                settings.lambda,
                federation.batch_size,
                &streams,
            )?)
        })
        .collect()
}

/// Outcome of `train`: the run plus optional finetuned test accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub run: RunResult,
    pub finetuned_test_acc: Option<f64>,
}

pub fn train(config: &ExperimentConfig, solver: SolverKind) -> Result<TrainReport> {
    let splits = load_federation(config, config.federation.seed)?;
    let federation = federation_for(config, &splits)?;
    let spec = model_spec(config.family, &splits);
    let run = run_solver(solver, &spec, &federation, &splits, config.fedprox_mu())?;
    let finetuned_test_acc = match config.finetune() {
        Some(settings) => {
            let tuned = finetune_models(&spec, &run.models, &splits, &settings, &federation)?;
            score(&spec, &tuned, &splits, Split::Test).0
        }
        None => None,
    };
    Ok(TrainReport {
        run,
        finetuned_test_acc,
    })
}

/// One sweep grid point. Solvers that ignore clipping and noise only vary `rounds`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub gamma: Option<f64>,
    pub sigma: Option<f64>,
    pub rounds: usize,
}

pub fn grid_points(config: &ExperimentConfig, solver: SolverKind) -> Vec<GridPoint> {
    let g = &config.sweep;
    if !solver.uses_privacy_grid() {
        return g
            .rounds
            .iter()
            .map(|&rounds| GridPoint {
                gamma: None,
                sigma: None,
                rounds,
            })
            .collect();
    }
    let mut out = Vec::new();
    for &gamma in &g.gamma {
        for &sigma in &g.sigma {
            for &rounds in &g.rounds {
                out.push(GridPoint {
                    gamma: Some(gamma),
                    sigma: Some(sigma),
                    rounds,
                });
            }
        }
    }
    out
}

fn configure(base: &FederationConfig, point: GridPoint, seed: u64) -> FederationConfig {
    let mut fed = base.clone();
    fed.epsilon_target = None;
    fed.rounds = point.rounds;
    fed.seed = seed;
    if let Some(g) = point.gamma {
        fed.gamma = g;
    }
    if let Some(s) = point.sigma {
        fed.sigma = s;
    }
    fed
}

/// Summary of one run, as written to `runs.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub solver: SolverKind,
    pub point: GridPoint,
    pub seed: u64,
    pub epsilon: f64,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
}

/// Selected configuration for one solver and epsilon target.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub solver: SolverKind,
    pub target_epsilon: f64,
    /// `None` when no grid point certifies the target.
    pub selected: Option<Selection>,
}

impl SummaryRow {
    /// One human-readable line.
    pub fn describe(&self) -> String {
        match &self.selected {
            Some(s) => format!(
                "{} eps<={}: test_acc {:.4} +/- {:.4} (certified eps {:.4}, T {}, gamma {}, sigma {})",
                self.solver,
                self.target_epsilon,
                s.test_acc_mean,
                s.test_acc_std,
                s.epsilon,
                s.point.rounds,
                s.point.gamma.map_or("-".to_string(), |g| g.to_string()),
                s.point.sigma.map_or("-".to_string(), |g| g.to_string()),
            ),
            None => format!("{} eps<={}: infeasible", self.solver, self.target_epsilon),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub point: GridPoint,
    /// Certified epsilon of the selected point.
    pub epsilon: f64,
    pub val_acc_mean: f64,
    pub test_acc_mean: f64,
    /// Sample standard deviation over seeds (0 for one seed).
    pub test_acc_std: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub runs: Vec<RunRow>,
    pub summary: Vec<SummaryRow>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Per solver and target, the grid point with the best mean validation
/// accuracy among those whose certified epsilon is within the target. Ties
/// keep the earlier grid point.
pub fn select(runs: &[RunRow], solvers: &[SolverKind], targets: &[f64]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for &solver in solvers {
        let mut points: Vec<(GridPoint, Vec<&RunRow>)> = Vec::new();
        for r in runs.iter().filter(|r| r.solver == solver) {
            match points.iter_mut().find(|(p, _)| *p == r.point) {
                Some((_, rows)) => rows.push(r),
                None => points.push((r.point, vec![r])),
            }
        }
        for &target in targets {
            let mut best: Option<Selection> = None;
            for (point, rows) in &points {
                let epsilon = rows.iter().map(|r| r.epsilon).fold(0.0, f64::max);
                if epsilon > target {
                    continue;
                }
                let val: Option<Vec<f64>> = rows.iter().map(|r| r.val_acc).collect();
                let test: Option<Vec<f64>> = rows.iter().map(|r| r.test_acc).collect();
                let (Some(val), Some(test)) = (val, test) else {
                    continue;
                };
                let candidate = Selection {
                    point: *point,
                    epsilon,
                    val_acc_mean: mean(&val),
                    test_acc_mean: mean(&test),
                    test_acc_std: sample_std(&test),
                    seeds: rows.len(),
                };
                if best.as_ref().is_none_or(|b| candidate.val_acc_mean > b.val_acc_mean) {
                    best = Some(candidate);
                }
            }
            out.push(SummaryRow {
                solver,
                target_epsilon: target,
                selected: best,
            });
        }
    }
    out
}

pub fn trace_file_name(solver: SolverKind, point: GridPoint, seed: u64) -> String {
    match (point.gamma, point.sigma) {
        (Some(g), Some(s)) => format!("{solver}_gamma{g}_sigma{s}_T{}_seed{seed}.csv", point.rounds),
        _ => format!("{solver}_T{}_seed{seed}.csv", point.rounds),
    }
}

/// Runs every solver at every grid point and seed, writing one trace per run
/// under `traces_dir` when given, then selects per epsilon target.
pub fn sweep(config: &ExperimentConfig, traces_dir: Option<&Path>) -> Result<SweepReport> {
    let seeds = &config.sweep.seeds;
    let federations: Vec<Vec<TaskSplits>> = seeds
        .par_iter()
        .map(|&s| load_federation(config, s))
        .collect::<Result<_>>()?;
    let base = federation_for(config, &federations[0])?;
    let spec = model_spec(config.family, &federations[0]);

    let mut jobs = Vec::new();
    for &solver in &config.solvers {
        for point in grid_points(config, solver) {
            for (i, &seed) in seeds.iter().enumerate() {
                jobs.push((solver, point, i, seed));
            }
        }
    }
    let runs: Vec<RunRow> = jobs
        .par_iter()
        .map(|&(solver, point, i, seed)| {
            let fed = configure(&base, point, seed);
            let run = run_solver(solver, &spec, &fed, &federations[i], config.fedprox_mu())?;
            if let Some(dir) = traces_dir {
                write_trace(&dir.join(trace_file_name(solver, point, seed)), &run.trace)?;
            }
            Ok(RunRow {
                solver,
                point,
                seed,
                epsilon: run.epsilon,
                val_acc: run.val_acc,
                test_acc: run.test_acc,
                initial_train_loss: run.trace.initial.avg_train_loss,
                final_train_loss: run.trace.last().avg_train_loss,
            })
        })
        .collect::<Result<_>>()?;
    let summary = select(&runs, &config.solvers, &config.sweep.epsilon);
    Ok(SweepReport { runs, summary })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const RUNS_HEADER: [&str; 10] = [
    "solver",
    "gamma",
    "sigma",
    "rounds",
    "seed",
    "epsilon",
    "val_acc",
    "test_acc",
    "initial_train_loss",
    "final_train_loss",
];

pub const SUMMARY_HEADER: [&str; 11] = [
    "solver",
    "target_epsilon",
    "status",
    "epsilon",
    "gamma",
    "sigma",
    "rounds",
    "val_acc_mean",
    "test_acc_mean",
    "test_acc_std",
    "seeds",
];

fn csv_file(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    csv::Writer::from_path(path).map_err(|source| HarnessError::Csv {
        file: path.display().to_string(),
        source,
    })
}

pub fn write_runs(path: &Path, runs: &[RunRow]) -> Result<()> {
    let csv_err = |source| HarnessError::Csv {
        file: path.display().to_string(),
        source,
    };
    let mut w = csv_file(path)?;
    w.write_record(RUNS_HEADER).map_err(csv_err)?;
    for r in runs {
        w.write_record([
            r.solver.to_string(),
            opt(r.point.gamma),
            opt(r.point.sigma),
            r.point.rounds.to_string(),
            r.seed.to_string(),
            r.epsilon.to_string(),
            opt(r.val_acc),
            opt(r.test_acc),
            r.initial_train_loss.to_string(),
            r.final_train_loss.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let csv_err = |source| HarnessError::Csv {
        file: path.display().to_string(),
        source,
    };
    let mut w = csv_file(path)?;
    w.write_record(SUMMARY_HEADER).map_err(csv_err)?;
    for r in rows {
        let mut row = vec![r.solver.to_string(), r.target_epsilon.to_string()];
        match &r.selected {
            Some(s) => row.extend([
                "ok".to_string(),
                s.epsilon.to_string(),
                opt(s.point.gamma),
                opt(s.point.sigma),
                s.point.rounds.to_string(),
                s.val_acc_mean.to_string(),
                s.test_acc_mean.to_string(),
                s.test_acc_std.to_string(),
                s.seeds.to_string(),
            ]),
            None => {
                row.push("infeasible".to_string());
                row.extend(std::iter::repeat_n(String::new(), 8));
            }
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Runs the sweep and writes `traces/`, `runs.csv` and `summary.csv` under `dir`.
pub fn run_experiment(config: &ExperimentConfig, dir: &Path) -> Result<SweepReport> {
    let report = sweep(config, Some(&dir.join("traces")))?;
    write_runs(&dir.join("runs.csv"), &report.runs)?;
    write_summary(&dir.join("summary.csv"), &report.summary)?;
    Ok(report)
}
