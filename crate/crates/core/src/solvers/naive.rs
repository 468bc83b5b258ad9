//! DP-SGD applied to the concatenated model `[w_1; ...; w_m]`.
//!
//! Each selected task clips its own block update to `gamma` and every block
//! receives `N(0, sigma^2 I)`, including the owner's. The resulting models are
//! plain DP with respect to every task, the owner included, which is what
//! makes this baseline lose to PMTL.

use rayon::prelude::*;

use super::client::{client_update, ClientState};
use super::{check_inputs, initial_models, sample_tasks, Evaluated, Recorder, RunOptions, SolverOutput};
use crate::config::FederationConfig;
use crate::data::TaskDataset;
use crate::error::Result;
use crate::objectives::ModelSpec;
use crate::privacy::{calibrate_sigma, clip, noise_vector, MechanismSchedule, PrivacyLedger};
use crate::rng::Streams;
use crate::trace::RunTrace;
use crate::vector::ParamVector;

pub fn run_naive_dp_mtl(spec: &ModelSpec, config: &FederationConfig, train: &[TaskDataset]) -> Result<SolverOutput> {
    run_naive_dp_mtl_with(spec, config, train, RunOptions::default())
}

/// When `epsilon_target` is set, sigma is calibrated for the joint-model
/// mechanism (no averaging), so it is `q` times larger than PMTL's.
pub fn run_naive_dp_mtl_with(
    spec: &ModelSpec,
    config: &FederationConfig,
    train: &[TaskDataset],
    mut options: RunOptions<'_>,
) -> Result<SolverOutput> {
    check_inputs(spec, config, train)?;
    let mut config = config.clone();
    let schedule = MechanismSchedule::joint_model(&config);
    if let Some(eps) = config.epsilon_target {
        config.sigma = calibrate_sigma(eps, &schedule)?;
    }
    let recorder = Recorder::new(spec, train, &options)?;
    let mut clients: Vec<ClientState> = initial_models(spec, &config, options.initial_models.take())?
        .into_iter()
        .enumerate()
        .map(|(k, w)| ClientState::new(k, w))
        .collect();
    let mut ledger = PrivacyLedger::new(config.delta, config.sensitivity)?;
    let streams = Streams::new(config.seed);
    let models_of = |c: &[ClientState]| -> Vec<ParamVector> { c.iter().map(|c| c.model.clone()).collect() };

    let models = models_of(&clients);
    let mean = ParamVector::mean(&models)?;
    let record = |round, models: &[ParamVector], mean: &ParamVector, eps| {
        recorder.record(
            round,
            Evaluated::PerTask {
                models,
                anchor: mean,
                lambda: config.lambda,
            },
            eps,
        )
    };
    let mut trace = RunTrace::new(record(0, &models, &mean, 0.0)?);
    let mut mean = mean;

    for t in 0..config.rounds {
        let selected = sample_tasks(&streams, t, config.tasks, config.sampled);
        if let Some(obs) = options.observer.as_deref_mut() {
            obs.on_broadcast(t, &selected, &mean);
        }
        let updates: Vec<ParamVector> = selected
            .par_iter()
            .map(|&k| {
                let w_new = client_update(
                    spec,
                    &clients[k],
                    &mean,
                    &train[k],
                    config.eta,
                    config.lambda,
                    config.local_steps,
                    config.batch_size,
                    t,
                    &mut streams.batch(k, t),
                )?;
                Ok(clip(&w_new.sub(&clients[k].model)?, config.gamma))
            })
            .collect::<Result<_>>()?;
        for (&k, u) in selected.iter().zip(&updates) {
            clients[k].model = clients[k].model.add(u)?;
            clients[k].last_selected = Some(t);
        }
        if config.sigma > 0.0 {
            let mut rng = streams.noise(t);
            for c in clients.iter_mut() {
                c.model = c.model.add(&noise_vector(spec.dim(), config.sigma, &mut rng)?)?;
            }
        }
        ledger.record_release(schedule.noise_multiplier(config.sigma), config.sampling_rate())?;
        let models = models_of(&clients);
        mean = ParamVector::mean(&models)?;
        trace.push(record(t + 1, &models, &mean, ledger.epsilon()?)?);
    }

    Ok(SolverOutput {
        models: models_of(&clients),
        global: mean,
        trace,
        ledger,
        sigma: config.sigma,
    })
}
