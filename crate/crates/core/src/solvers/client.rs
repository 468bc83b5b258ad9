use rand::seq::index;
use rand_chacha::ChaCha20Rng;

use crate::config::BatchSize;
use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::objectives::{empirical_grad, local_objective_grad, Batch, ModelSpec};
use crate::vector::ParamVector;

/// A task learner's persistent state.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub task_id: usize,
    pub model: ParamVector,
    /// Last round in which the task was selected; `None` before its first selection.
    pub last_selected: Option<usize>,
}

impl ClientState {
    pub fn new(task_id: usize, model: ParamVector) -> Self {
        Self {
            task_id,
            model,
            last_selected: None,
        }
    }
}

/// What the local gradient step descends on.
#[derive(Debug, Clone, Copy)]
pub enum LocalRule<'a> {
    /// The empirical loss alone.
    Plain,
    /// Empirical loss plus `weight/2 ||w - anchor||^2`.
    Anchored { anchor: &'a ParamVector, weight: f64 },
}

/// Hyperparameters of one burst of local SGD.
#[derive(Debug, Clone, Copy)]
pub struct LocalSchedule {
    pub eta: f64,
    pub steps: usize,
    pub batch_size: BatchSize,
}

/// Runs `schedule.steps` steps of `w <- w - eta * grad` from `start`.
///
/// `label` names the caller's position (task, round) in error messages.
pub fn local_sgd(
    spec: &ModelSpec,
    start: &ParamVector,
    rule: LocalRule<'_>,
    data: &TaskDataset,
    schedule: LocalSchedule,
    rng: &mut ChaCha20Rng,
    label: &str,
) -> Result<ParamVector> {
    let mut w = start.clone();
    let n = data.len();
    for step in 0..schedule.steps {
        let indices = match schedule.batch_size {
            BatchSize::Fixed(b) if b < n => Some(index::sample(rng, n, b).into_vec()),
            _ => None,
        };
        let batch = match &indices {
            Some(idx) => Batch::subset(data, idx),
            None => Batch::full(data),
        };
        let grad = match rule {
            LocalRule::Plain => empirical_grad(spec, &w, batch),
            LocalRule::Anchored { anchor, weight } => {
                local_objective_grad(spec, &w, anchor, batch, weight)
            }
        }
        .map_err(|e| match e {
            Error::NonFinite { .. } => Error::NonFinite {
                context: format!("{label} step {step}: gradient"),
            },
            other => other,
        })?;
        w.axpy(-schedule.eta, &grad).map_err(|e| match e {
            Error::NonFinite { .. } => Error::NonFinite {
                context: format!("{label} step {step}: parameters"),
            },
            other => other,
        })?;
    }
    Ok(w)
}

/// One PMTL client update: `E` steps of `w <- w - eta (grad l_k(w) + lambda (w - w_tilde))`
/// starting from the model the client last trained. Does not touch `state`.
#[allow(clippy::too_many_arguments)]
pub fn client_update(
    spec: &ModelSpec,
    state: &ClientState,
    w_tilde: &ParamVector,
    data: &TaskDataset,
    eta: f64,
    lambda: f64,
    local_steps: usize,
    batch_size: BatchSize,
    round: usize,
    rng: &mut ChaCha20Rng,
) -> Result<ParamVector> {
    if local_steps == 0 {
        return Err(Error::InvalidConfig("E must be at least 1".to_string()));
    }
    local_sgd(
        spec,
        &state.model,
        LocalRule::Anchored {
            anchor: w_tilde,
            weight: lambda,
        },
        data,
        LocalSchedule {
            eta,
            steps: local_steps,
            batch_size,
        },
        rng,
        &format!("task {} round {round}", state.task_id),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::ModelFamily;
    use crate::rng::Streams;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn sem() -> ModelSpec {
        ModelSpec::new(ModelFamily::SquaredErrorMean, 1)
    }

    fn data(points: &[f64]) -> TaskDataset {
        TaskDataset::from_points(0, &points.iter().map(|x| vec![*x]).collect::<Vec<_>>()).unwrap()
    }

    fn update(state: &ClientState, anchor: &ParamVector, d: &TaskDataset, eta: f64, lambda: f64, e: usize) -> Result<ParamVector> {
        client_update(&sem(), state, anchor, d, eta, lambda, e, BatchSize::Full, 0, &mut Streams::new(0).batch(0, 0))
    }

    #[test]
    fn single_step_by_hand() {
        let s = ClientState::new(0, pv(&[0.0]));
        let w = update(&s, &pv(&[0.0]), &data(&[1.0]), 0.25, 0.0, 1).unwrap();
        assert_eq!(w, pv(&[0.5]));
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let s = ClientState::new(0, pv(&[0.7]));
        assert_eq!(update(&s, &pv(&[3.0]), &data(&[1.0, 5.0]), 0.0, 2.0, 4).unwrap(), pv(&[0.7]));
    }

    #[test]
    fn strong_regularizer_contracts_towards_anchor() {
        // l(w) = (1 - w)^2 has L = 2; lambda = 10 L, eta = 1/lambda
        let lambda = 20.0;
        let start = pv(&[4.0]);
        let anchor = pv(&[-1.0]);
        let s = ClientState::new(0, start.clone());
        let w = update(&s, &anchor, &data(&[1.0]), 1.0 / lambda, lambda, 1).unwrap();
        assert!(w.sub(&anchor).unwrap().l2_norm() <= start.sub(&anchor).unwrap().l2_norm());
    }

    #[test]
    fn divergence_names_the_step() {
        let s = ClientState::new(3, pv(&[1.0]));
        let err = client_update(
            &sem(), &s, &pv(&[0.0]), &data(&[1e200]), 1e200, 0.0, 5, BatchSize::Full, 7,
            &mut Streams::new(0).batch(3, 7),
        )
        .unwrap_err();
        match err {
            Error::NonFinite { context } => assert!(context.contains("task 3 round 7"), "{context}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn minibatches_are_reproducible() {
        let d = data(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let s = ClientState::new(0, pv(&[0.0]));
        let run = || {
            client_update(&sem(), &s, &pv(&[0.0]), &d, 0.01, 0.5, 3, BatchSize::Fixed(2), 1, &mut Streams::new(9).batch(0, 1))
                .unwrap()
        };
        assert_eq!(run(), run());
    }
}
