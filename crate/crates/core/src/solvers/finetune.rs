use crate::config::BatchSize;
use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::objectives::ModelSpec;
use crate::rng::{Purpose, Streams};
use crate::vector::ParamVector;

use super::client::{local_sgd, LocalRule, LocalSchedule};

/// Post-hoc local finetuning of a released model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinetuneMethod {
    /// SGD on the empirical loss.
    Vanilla,
    /// SGD on the empirical loss plus `lambda/2 ||w - w_start||^2`.
    MeanRegularized,
}

/// Finetunes `w_start` on one task's data. Purely local: consumes no privacy budget.
#[allow(clippy::too_many_arguments)]
pub fn finetune(
    spec: &ModelSpec,
    w_start: &ParamVector,
    data: &TaskDataset,
    method: FinetuneMethod,
    steps: usize,
    eta: f64,
    lambda: f64,
    batch_size: BatchSize,
    streams: &Streams,
) -> Result<ParamVector> {
    if steps == 0 {
        return Err(Error::InvalidConfig("finetuning needs at least one step".to_string()));
    }
    let rule = match method {
        FinetuneMethod::Vanilla => LocalRule::Plain,
        FinetuneMethod::MeanRegularized => LocalRule::Anchored {
            anchor: w_start,
            weight: lambda,
        },
    };
    local_sgd(
        spec,
        w_start,
        rule,
        data,
        LocalSchedule {
            eta,
            steps,
            batch_size,
        },
        &mut streams.stream(Purpose::Finetune, data.task_id() as u64, 0),
        &format!("finetune task {}", data.task_id()),
    )
}
