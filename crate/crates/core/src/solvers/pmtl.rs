//! Private mean-regularized multi-task learning.

use rayon::prelude::*;

use super::client::{client_update, ClientState};
use super::{
    average_updates, check_inputs, initial_models, sample_tasks, Evaluated, Recorder, RunOptions,
    SolverOutput,
};
use crate::config::FederationConfig;
use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::objectives::ModelSpec;
use crate::privacy::{clip, gaussian_mechanism, MechanismSchedule, PrivacyLedger};
use crate::rng::Streams;
use crate::trace::RunTrace;
use crate::vector::ParamVector;

/// The global learner's state between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub w_tilde: ParamVector,
    /// Rounds completed so far.
    pub round: usize,
    pub ledger: PrivacyLedger,
}

impl ServerState {
    /// `w_tilde^0` is the mean of the clients' starting models.
    pub fn new(clients: &[ClientState], ledger: PrivacyLedger) -> Result<Self> {
        let models: Vec<ParamVector> = clients.iter().map(|c| c.model.clone()).collect();
        Ok(Self {
            w_tilde: ParamVector::mean(&models)?,
            round: 0,
            ledger,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    /// `S_t`, ascending.
    pub selected: Vec<usize>,
    /// The noisy mean update added to `w_tilde`.
    pub applied_update: ParamVector,
}

/// One round of PMTL: sample `S_t`, run the selected clients, clip their
/// updates `g_k = w_k^{t+1} - w_k^{o_k}`, add the noisy mean to `w_tilde`
/// and record the release.
///
/// Unselected clients are left bit-identical.
pub fn pmtl_round(
    spec: &ModelSpec,
    config: &FederationConfig,
    server: &mut ServerState,
    clients: &mut [ClientState],
    datasets: &[TaskDataset],
) -> Result<RoundOutcome> {
    if server.round >= config.rounds {
        return Err(Error::InvalidConfig(format!(
            "round {} is past T = {}",
            server.round, config.rounds
        )));
    }
    let t = server.round;
    let streams = Streams::new(config.seed);
    let selected = sample_tasks(&streams, t, config.tasks, config.sampled);
    let w_tilde = &server.w_tilde;

    let trained: Vec<ParamVector> = selected
        .par_iter()
        .map(|&k| {
            client_update(
                spec,
                &clients[k],
                w_tilde,
                &datasets[k],
                config.eta,
                config.lambda,
                config.local_steps,
                config.batch_size,
                t,
                &mut streams.batch(k, t),
            )
        })
        .collect::<Result<_>>()?;

    let clipped: Vec<ParamVector> = selected
        .iter()
        .zip(&trained)
        .map(|(&k, w_new)| Ok(clip(&w_new.sub(&clients[k].model)?, config.gamma)))
        .collect::<Result<_>>()?;
    let mean = average_updates(&clipped, spec.dim())?;
    let noisy = gaussian_mechanism(&mean, config.sigma, &mut streams.noise(t))?;
    server.w_tilde = server.w_tilde.add(&noisy)?;
    let schedule = MechanismSchedule::aggregation(config);
    server
        .ledger
        .record_release(schedule.noise_multiplier(config.sigma), config.sampling_rate())?;
    server.round += 1;

    for (&k, w_new) in selected.iter().zip(trained) {
        clients[k].model = w_new;
        clients[k].last_selected = Some(t);
    }
    Ok(RoundOutcome {
        selected,
        applied_update: noisy,
    })
}

/// PMTL for `T` rounds with default options.
pub fn run_pmtl(spec: &ModelSpec, config: &FederationConfig, train: &[TaskDataset]) -> Result<SolverOutput> {
    run_pmtl_with(spec, config, train, RunOptions::default())
}

pub fn run_pmtl_with(
    spec: &ModelSpec,
    config: &FederationConfig,
    train: &[TaskDataset],
    mut options: RunOptions<'_>,
) -> Result<SolverOutput> {
    check_inputs(spec, config, train)?;
    let config = config.resolved()?;
    let recorder = Recorder::new(spec, train, &options)?;
    let mut clients: Vec<ClientState> = initial_models(spec, &config, options.initial_models.take())?
        .into_iter()
        .enumerate()
        .map(|(k, w)| ClientState::new(k, w))
        .collect();
    let ledger = PrivacyLedger::new(config.delta, config.sensitivity)?;
    let mut server = ServerState::new(&clients, ledger)?;

    let snapshot = |clients: &[ClientState]| -> Vec<ParamVector> {
        clients.iter().map(|c| c.model.clone()).collect()
    };
    let models = snapshot(&clients);
    let initial = recorder.record(
        0,
        Evaluated::PerTask {
            models: &models,
            anchor: &server.w_tilde,
            lambda: config.lambda,
        },
        0.0,
    )?;
    let mut trace = RunTrace::new(initial);

    let streams = Streams::new(config.seed);
    for t in 0..config.rounds {
        if let Some(obs) = options.observer.as_deref_mut() {
            obs.on_broadcast(t, &sample_tasks(&streams, t, config.tasks, config.sampled), &server.w_tilde);
        }
        pmtl_round(spec, &config, &mut server, &mut clients, train)?;
        let models = snapshot(&clients);
        trace.push(recorder.record(
            t + 1,
            Evaluated::PerTask {
                models: &models,
                anchor: &server.w_tilde,
                lambda: config.lambda,
            },
            server.ledger.epsilon()?,
        )?);
    }

    Ok(SolverOutput {
        models: snapshot(&clients),
        global: server.w_tilde,
        trace,
        ledger: server.ledger,
        sigma: config.sigma,
    })
}

/// `w_tilde^1` after one noiseless round from the default initialization,
/// the aggregate whose sensitivity the probe measures.
pub fn pmtl_aggregate_once(
    spec: &ModelSpec,
    config: &FederationConfig,
    train: &[TaskDataset],
    initial_models: Option<Vec<ParamVector>>,
) -> Result<ParamVector> {
    let mut one_round = config.clone();
    one_round.rounds = 1;
    one_round.sigma = 0.0;
    one_round.epsilon_target = None;
    check_inputs(spec, &one_round, train)?;
    let mut clients: Vec<ClientState> = super::initial_models(spec, &one_round, initial_models)?
        .into_iter()
        .enumerate()
        .map(|(k, w)| ClientState::new(k, w))
        .collect();
    let ledger = PrivacyLedger::new(one_round.delta, one_round.sensitivity)?;
    let mut server = ServerState::new(&clients, ledger)?;
    pmtl_round(spec, &one_round, &mut server, &mut clients, train)?;
    Ok(server.w_tilde)
}
