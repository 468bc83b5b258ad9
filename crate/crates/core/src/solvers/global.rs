//! Single-global-model baselines: FedAvg and FedProx, private or not.

use rayon::prelude::*;

use super::client::{local_sgd, LocalRule, LocalSchedule};
use super::{
    average_updates, check_inputs, initial_models, sample_tasks, Evaluated, Recorder, RunOptions,
    SolverOutput,
};
use crate::config::FederationConfig;
use crate::data::TaskDataset;
use crate::error::Result;
use crate::objectives::ModelSpec;
use crate::privacy::{clip, gaussian_mechanism, MechanismSchedule, PrivacyLedger};
use crate::rng::Streams;
use crate::trace::RunTrace;
use crate::vector::ParamVector;

/// Local objective of the global baselines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GlobalLocalRule {
    /// FedAvg: plain empirical loss.
    Plain,
    /// FedProx: empirical loss plus `mu/2 ||w - w_tilde^t||^2`.
    Proximal { mu: f64 },
}

/// FedAvg. Non-private runs skip clipping and noise and record noiseless releases.
pub fn run_fedavg_global(
    spec: &ModelSpec,
    config: &FederationConfig,
    train: &[TaskDataset],
    private: bool,
) -> Result<SolverOutput> {
    run_global_with(spec, config, train, GlobalLocalRule::Plain, private, RunOptions::default())
}

/// FedProx with proximal weight `mu_prox`.
pub fn run_fedprox(
    spec: &ModelSpec,
    config: &FederationConfig,
    train: &[TaskDataset],
    mu_prox: f64,
    private: bool,
) -> Result<SolverOutput> {
    run_global_with(
        spec,
        config,
        train,
        GlobalLocalRule::Proximal { mu: mu_prox },
        private,
        RunOptions::default(),
    )
}

pub fn run_global_with(
    spec: &ModelSpec,
    config: &FederationConfig,
    train: &[TaskDataset],
    rule: GlobalLocalRule,
    private: bool,
    mut options: RunOptions<'_>,
) -> Result<SolverOutput> {
    check_inputs(spec, config, train)?;
    let mut config = config.resolved()?;
    if !private {
        config.sigma = 0.0;
    }
    let recorder = Recorder::new(spec, train, &options)?;
    let starts = initial_models(spec, &config, options.initial_models.take())?;
    let mut w_tilde = ParamVector::mean(&starts)?;
    let mut ledger = PrivacyLedger::new(config.delta, config.sensitivity)?;
    let schedule = MechanismSchedule::aggregation(&config);
    let streams = Streams::new(config.seed);
    let local = LocalSchedule {
        eta: config.eta,
        steps: config.local_steps,
        batch_size: config.batch_size,
    };

    let mut trace = RunTrace::new(recorder.record(0, Evaluated::Global(&w_tilde), 0.0)?);
    for t in 0..config.rounds {
        let selected = sample_tasks(&streams, t, config.tasks, config.sampled);
        if let Some(obs) = options.observer.as_deref_mut() {
            obs.on_broadcast(t, &selected, &w_tilde);
        }
        let anchor = &w_tilde;
        let updates: Vec<ParamVector> = selected
            .par_iter()
            .map(|&k| {
                let local_rule = match rule {
                    GlobalLocalRule::Plain => LocalRule::Plain,
                    GlobalLocalRule::Proximal { mu } => LocalRule::Anchored { anchor, weight: mu },
                };
                let w = local_sgd(
                    spec,
                    anchor,
                    local_rule,
                    &train[k],
                    local,
                    &mut streams.batch(k, t),
                    &format!("task {k} round {t}"),
                )?;
                let g = w.sub(anchor)?;
                Ok(if private { clip(&g, config.gamma) } else { g })
            })
            .collect::<Result<_>>()?;
        let mean = average_updates(&updates, spec.dim())?;
        let step = if private {
            gaussian_mechanism(&mean, config.sigma, &mut streams.noise(t))?
        } else {
            mean
        };
        w_tilde = w_tilde.add(&step)?;
        let z = if private {
            schedule.noise_multiplier(config.sigma)
        } else {
            0.0
        };
        ledger.record_release(z, config.sampling_rate())?;
        trace.push(recorder.record(t + 1, Evaluated::Global(&w_tilde), ledger.epsilon()?)?);
    }

    Ok(SolverOutput {
        models: vec![w_tilde.clone()],
        global: w_tilde,
        trace,
        ledger,
        sigma: config.sigma,
    })
}
