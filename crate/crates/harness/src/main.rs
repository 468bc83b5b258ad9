use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pmtl_core::privacy::MechanismSchedule;
use pmtl_harness::experiment::{run_experiment, train, SolverKind};
use pmtl_harness::ingest::write_task_directory;
use pmtl_harness::probe::{probe_sensitivity, ProbeSettings};
use pmtl_harness::synthetic::generate_synthetic;
use pmtl_harness::trace_csv::write_trace;
use pmtl_harness::{ExperimentConfig, HarnessError, Result};

/// Environment variable naming the output directory when `--out` is absent.
const OUTPUT_ENV: &str = "PMTL_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "pmtl", version, about = "Private mean-regularized multi-task learning experiments")]
struct Cli {
    /// Experiment configuration file (dotted `key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set federation.lambda=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct FederationFlags {
    /// Noise std per coordinate (federation.sigma).
    #[arg(long)]
    sigma: Option<f64>,
    /// Clip bound (federation.gamma).
    #[arg(long)]
    gamma: Option<f64>,
    /// Communication rounds T (federation.rounds).
    #[arg(long)]
    rounds: Option<usize>,
    /// Number of tasks m (federation.m).
    #[arg(long)]
    tasks: Option<usize>,
    /// Tasks sampled per round q (federation.q).
    #[arg(long)]
    sampled: Option<usize>,
    /// Target delta (federation.delta).
    #[arg(long)]
    delta: Option<f64>,
    /// standard or conservative (federation.sensitivity).
    #[arg(long)]
    sensitivity: Option<String>,
    /// Account for DP-SGD on the concatenated model instead of the noisy mean.
    #[arg(long)]
    joint_model: bool,
}

impl FederationFlags {
    fn assignments(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut push = |key: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push(format!("{key}={v}"));
            }
        };
        push("federation.m", self.tasks.map(|v| v.to_string()));
        push("federation.q", self.sampled.map(|v| v.to_string()));
        push("federation.sigma", self.sigma.map(|v| v.to_string()));
        push("federation.gamma", self.gamma.map(|v| v.to_string()));
        push("federation.rounds", self.rounds.map(|v| v.to_string()));
        push("federation.delta", self.delta.map(|v| v.to_string()));
        push("federation.sensitivity", self.sensitivity.clone());
        out
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one solver and write its trace.
    Train {
        /// Seed for data generation, splits and training.
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "pmtl")]
        solver: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every solver over the grids and select per epsilon target by validation accuracy.
    Sweep {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Epsilon certified for a noise level.
    Certify {
        #[command(flatten)]
        flags: FederationFlags,
    },
    /// Smallest noise level certified at a target epsilon.
    Calibrate {
        #[arg(long)]
        epsilon: f64,
        #[command(flatten)]
        flags: FederationFlags,
    },
    /// Write a synthetic federation as a directory of task CSV files.
    GenData {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure the aggregate's sensitivity on neighbouring federations.
    ProbeSensitivity {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 10)]
        tasks: usize,
        #[arg(long, default_value_t = 0.01)]
        gamma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn output_dir(flag: Option<PathBuf>, config: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("pmtl-output"))
}

fn load_config(cli: &Cli, extra: &[String]) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    config.set_all(cli.overrides.iter().chain(extra).map(String::as_str))?;
    Ok(config)
}

fn show(v: Option<f64>) -> String {
    v.map_or_else(|| "na".to_string(), |x| x.to_string())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train { seed, solver, out } => {
            let config = load_config(&cli, &[format!("federation.seed={seed}")])?;
            let solver = SolverKind::parse(solver)?;
            let dir = output_dir(out.clone(), &config);
            let report = train(&config, solver)?;
            let path = dir.join(format!("train_{solver}_seed{seed}.csv"));
            write_trace(&path, &report.run.trace)?;
            let r = &report.run;
            println!("solver = {solver}");
            println!("seed = {seed}");
            println!("sigma = {}", r.sigma);
            println!("epsilon = {}", r.epsilon);
            println!("final_train_loss = {}", r.trace.last().avg_train_loss);
            println!("val_acc = {}", show(r.val_acc));
            println!("test_acc = {}", show(r.test_acc));
            if let Some(settings) = config.finetune() {
                println!("finetune = {:?}", settings.method);
                println!("finetuned_test_acc = {}", show(report.finetuned_test_acc));
            }
            println!("trace = {}", path.display());
        }
        Command::Sweep { out } => {
            let config = load_config(&cli, &[])?;
            let dir = output_dir(out.clone(), &config);
            let report = run_experiment(&config, &dir)?;
            for row in &report.summary {
                println!("{}", row.describe());
            }
            println!("summary = {}", dir.join("summary.csv").display());
        }
        Command::Certify { flags } => {
            let config = load_config(&cli, &flags.assignments())?;
            let fed = &config.federation;
            let schedule = if flags.joint_model {
                MechanismSchedule::joint_model(fed)
            } else {
                MechanismSchedule::aggregation(fed)
            };
            let ledger = schedule.ledger(fed.sigma)?;
            let (epsilon, order) = ledger.epsilon_and_order()?;
            println!("epsilon = {epsilon}");
            println!("order = {order}");
            println!("noise_multiplier = {}", schedule.noise_multiplier(fed.sigma));
        }
        Command::Calibrate { epsilon, flags } => {
            let config = load_config(&cli, &flags.assignments())?;
            let fed = &config.federation;
            let schedule = if flags.joint_model {
                MechanismSchedule::joint_model(fed)
            } else {
                MechanismSchedule::aggregation(fed)
            };
            let sigma = pmtl_core::privacy::calibrate_sigma(*epsilon, &schedule)?;
            println!("sigma = {sigma}");
            println!("certified_epsilon = {}", schedule.epsilon(sigma)?);
        }
        Command::GenData { seed, out } => {
            let config = load_config(&cli, &[])?;
            let dir = output_dir(out.clone(), &config);
            let fed = generate_synthetic(&config.synthetic, *seed)?;
            write_task_directory(&dir, &fed.tasks)?;
            println!("wrote {} tasks to {}", fed.tasks.len(), dir.display());
        }
        Command::ProbeSensitivity {
            trials,
            tasks,
            gamma,
            seed,
        } => {
            let report = probe_sensitivity(&ProbeSettings {
                tasks: *tasks,
                gamma: *gamma,
                trials: *trials,
                seed: *seed,
                ..ProbeSettings::default()
            })?;
            let r = report.report;
            println!("trials = {}", r.trials);
            println!("max_difference = {}", r.max_difference);
            println!("standard_bound = {}", r.standard_bound);
            println!("conservative_bound = {}", r.conservative_bound);
            println!("standard_bound_violated = {}", r.standard_bound_violated());
            println!("conservative_bound_violated = {}", r.conservative_bound_violated());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_status(&e))
        }
    }
}

fn exit_status(e: &HarnessError) -> u8 {
    u8::try_from(e.exit_code()).unwrap_or(1)
}
