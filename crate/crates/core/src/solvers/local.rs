//! Local-only training: every task runs SGD on its own data and nothing is shared.

use rayon::prelude::*;

use super::client::{local_sgd, LocalRule, LocalSchedule};
use super::{check_inputs, initial_models, Evaluated, Recorder, RunOptions, SolverOutput};
use crate::config::FederationConfig;
use crate::data::TaskDataset;
use crate::error::Result;
use crate::objectives::ModelSpec;
use crate::privacy::PrivacyLedger;
use crate::rng::Streams;
use crate::trace::RunTrace;
use crate::vector::ParamVector;

/// `T` rounds of `E` plain local steps per task, consuming the same batch
/// substreams as the federated solvers. Nothing is released, so the ledger
/// stays empty and epsilon is zero.
pub fn run_local_only(spec: &ModelSpec, config: &FederationConfig, train: &[TaskDataset]) -> Result<SolverOutput> {
    run_local_only_with(spec, config, train, RunOptions::default())
}

pub fn run_local_only_with(
    spec: &ModelSpec,
    config: &FederationConfig,
    train: &[TaskDataset],
    mut options: RunOptions<'_>,
) -> Result<SolverOutput> {
    check_inputs(spec, config, train)?;
    let recorder = Recorder::new(spec, train, &options)?;
    let mut models = initial_models(spec, config, options.initial_models.take())?;
    let ledger = PrivacyLedger::new(config.delta, config.sensitivity)?;
    let streams = Streams::new(config.seed);
    let local = LocalSchedule {
        eta: config.eta,
        steps: config.local_steps,
        batch_size: config.batch_size,
    };
    // Objectives are reported against the (never shared) mean model with lambda = 0.
    let record = |round: usize, models: &[ParamVector]| {
        let mean = ParamVector::mean(models)?;
        recorder.record(
            round,
            Evaluated::PerTask {
                models,
                anchor: &mean,
                lambda: 0.0,
            },
            0.0,
        )
    };
    let mut trace = RunTrace::new(record(0, &models)?);
    for t in 0..config.rounds {
        models = models
            .par_iter()
            .enumerate()
            .map(|(k, w)| {
                local_sgd(
                    spec,
                    w,
                    LocalRule::Plain,
                    &train[k],
                    local,
                    &mut streams.batch(k, t),
                    &format!("task {k} round {t}"),
                )
            })
            .collect::<Result<_>>()?;
        trace.push(record(t + 1, &models)?);
    }
    let global = ParamVector::mean(&models)?;
    Ok(SolverOutput {
        models,
        global,
        trace,
        ledger,
        sigma: 0.0,
    })
}
