//! Training loops.
//!
//! Every solver draws its randomness from [`Streams`] substreams, so a run is
//! a pure function of its configuration, data and seed. Client updates inside
//! a round run in parallel and are reduced in ascending task order.

mod client;
mod evaluate;
mod finetune;
mod global;
mod local;
mod naive;
mod pmtl;

pub use client::{client_update, local_sgd, ClientState, LocalRule, LocalSchedule};
pub use evaluate::{evaluate, mean_accuracy, mean_loss, TaskMetrics};
pub use finetune::{finetune, FinetuneMethod};
pub use global::{run_fedavg_global, run_fedprox, run_global_with, GlobalLocalRule};
pub use local::{run_local_only, run_local_only_with};
pub use naive::{run_naive_dp_mtl, run_naive_dp_mtl_with};
pub use pmtl::{pmtl_aggregate_once, pmtl_round, run_pmtl, run_pmtl_with, RoundOutcome, ServerState};

use rand::seq::index;
use rayon::prelude::*;

use crate::config::FederationConfig;
use crate::data::{validate_federation, TaskDataset};
use crate::error::{Error, Result};
use crate::objectives::{
    accuracy, empirical_grad, empirical_loss, local_objective, local_objective_grad, Batch,
    ModelSpec,
};
use crate::privacy::PrivacyLedger;
use crate::rng::Streams;
use crate::trace::{RoundRecord, RunTrace};
use crate::vector::ParamVector;

/// Result of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOutput {
    /// One model per task for multi-task solvers, a single model for global ones.
    pub models: Vec<ParamVector>,
    /// Final broadcast model `w_tilde` (the global model itself for global solvers).
    pub global: ParamVector,
    pub trace: RunTrace,
    pub ledger: PrivacyLedger,
    /// Noise level actually used.
    pub sigma: f64,
}

impl SolverOutput {
    pub fn is_global(&self) -> bool {
        self.models.len() == 1
    }
}

/// Hook receiving what the server broadcasts at the start of each round.
pub trait RoundObserver {
    fn on_broadcast(&mut self, round: usize, selected: &[usize], broadcast: &ParamVector);
}

/// Optional inputs shared by all solvers.
#[derive(Default)]
pub struct RunOptions<'a> {
    /// Validation sets used for the per-round accuracy column.
    pub val: Option<&'a [TaskDataset]>,
    /// Explicit starting models (one per task), replacing the seeded initialization.
    pub initial_models: Option<Vec<ParamVector>>,
    /// Record the mean squared gradient norm of the per-task objectives every round.
    pub record_grad_norms: bool,
    pub observer: Option<&'a mut dyn RoundObserver>,
}

/// `S_t`: `q` distinct tasks drawn uniformly from the round's sampling stream, ascending.
pub fn sample_tasks(streams: &Streams, round: usize, tasks: usize, sampled: usize) -> Vec<usize> {
    if sampled >= tasks {
        return (0..tasks).collect();
    }
    let mut s = index::sample(&mut streams.sampling(round), tasks, sampled).into_vec();
    s.sort_unstable();
    s
}

fn check_inputs(spec: &ModelSpec, config: &FederationConfig, train: &[TaskDataset]) -> Result<()> {
    config.validate()?;
    if train.len() != config.tasks {
        return Err(Error::InvalidConfig(format!(
            "config has m = {} but {} datasets were given",
            config.tasks,
            train.len()
        )));
    }
    validate_federation(train)?;
    if train[0].width() != spec.feature_width {
        return Err(Error::DimensionMismatch {
            expected: spec.feature_width,
            actual: train[0].width(),
        });
    }
    Ok(())
}

/// Per-task starting models: explicit, identical, or one draw per task's init stream.
fn initial_models(
    spec: &ModelSpec,
    config: &FederationConfig,
    explicit: Option<Vec<ParamVector>>,
) -> Result<Vec<ParamVector>> {
    let streams = Streams::new(config.seed);
    let models = match explicit {
        Some(models) => {
            if models.len() != config.tasks {
                return Err(Error::InvalidConfig(format!(
                    "{} initial models given for {} tasks",
                    models.len(),
                    config.tasks
                )));
            }
            models
        }
        None if config.identical_init => {
            vec![spec.init_params(&mut streams.init(0)); config.tasks]
        }
        None => (0..config.tasks)
            .map(|k| spec.init_params(&mut streams.init(k)))
            .collect(),
    };
    for m in &models {
        m.ensure_dim(spec.dim())?;
    }
    Ok(models)
}

/// Models evaluated by a round record.
enum Evaluated<'a> {
    /// Model `k` on task `k`, objective regularized towards `anchor`.
    PerTask {
        models: &'a [ParamVector],
        anchor: &'a ParamVector,
        lambda: f64,
    },
    /// One model on every task, plain empirical loss.
    Global(&'a ParamVector),
}

struct Recorder<'a> {
    spec: &'a ModelSpec,
    train: &'a [TaskDataset],
    val: Option<&'a [TaskDataset]>,
    grad_norms: bool,
}

impl<'a> Recorder<'a> {
    fn new<'b: 'a>(spec: &'a ModelSpec, train: &'a [TaskDataset], options: &RunOptions<'b>) -> Result<Self> {
        if let Some(val) = options.val {
            if val.len() != train.len() {
                return Err(Error::InvalidConfig(format!(
                    "{} validation sets for {} tasks",
                    val.len(),
                    train.len()
                )));
            }
        }
        Ok(Self {
            spec,
            train,
            val: options.val,
            grad_norms: options.record_grad_norms,
        })
    }

    fn record(&self, round: usize, evaluated: Evaluated<'_>, epsilon_spent: f64) -> Result<RoundRecord> {
        let spec = self.spec;
        let per_task: Vec<(f64, Option<f64>, f64)> = self
            .train
            .par_iter()
            .enumerate()
            .map(|(k, data)| -> Result<(f64, Option<f64>, f64)> {
                let (w, objective, grad_sq) = match evaluated {
                    Evaluated::PerTask {
                        models,
                        anchor,
                        lambda,
                    } => {
                        let w = &models[k];
                        let f = local_objective(spec, w, anchor, data, lambda)?;
                        let g = if self.grad_norms {
                            local_objective_grad(spec, w, anchor, Batch::full(data), lambda)?
                                .l2_norm()
                                .powi(2)
                        } else {
                            0.0
                        };
                        (w, f, g)
                    }
                    Evaluated::Global(w) => {
                        let f = empirical_loss(spec, w, data)?;
                        let g = if self.grad_norms {
                            empirical_grad(spec, w, Batch::full(data))?.l2_norm().powi(2)
                        } else {
                            0.0
                        };
                        (w, f, g)
                    }
                };
                let acc = match self.val {
                    Some(val) => accuracy(spec, w, &val[k])?,
                    None => None,
                };
                Ok((objective, acc, grad_sq))
            })
            .collect::<Result<_>>()?;
        let m = per_task.len() as f64;
        let task_objectives: Vec<f64> = per_task.iter().map(|t| t.0).collect();
        let avg_train_loss = task_objectives.iter().sum::<f64>() / m;
        if !avg_train_loss.is_finite() {
            return Err(Error::NonFinite {
                context: format!("average training loss at round {round}"),
            });
        }
        let task_val_acc: Option<Vec<f64>> = per_task.iter().map(|t| t.1).collect();
        let avg_val_acc = task_val_acc
            .as_ref()
            .map(|a| a.iter().sum::<f64>() / a.len() as f64);
        let avg_grad_norm_sq = self
            .grad_norms
            .then(|| per_task.iter().map(|t| t.2).sum::<f64>() / m);
        Ok(RoundRecord {
            round,
            avg_train_loss,
            epsilon_spent,
            task_objectives,
            avg_val_acc,
            task_val_acc,
            avg_grad_norm_sq,
        })
    }
}

/// Clipped (or raw) updates of the selected tasks, averaged in ascending task order.
fn average_updates(updates: &[ParamVector], dim: usize) -> Result<ParamVector> {
    let mut sum = ParamVector::zeros(dim);
    for u in updates {
        sum = sum.add(u)?;
    }
    sum.scale(1.0 / updates.len() as f64)
}
