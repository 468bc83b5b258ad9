use crate::data::{Split, TaskSplits};
use crate::error::{Error, Result};
use crate::objectives::{accuracy, empirical_loss, ModelSpec};
use crate::vector::ParamVector;

#[derive(Debug, Clone, PartialEq)]
pub struct TaskMetrics {
    pub task_id: usize,
    pub loss: f64,
    /// `None` for regression families.
    pub accuracy: Option<f64>,
}

/// Scores models on one split of every task.
///
/// A single model is broadcast to all tasks (global mode); `m` models are
/// paired with their own task (multi-task mode).
pub fn evaluate(
    spec: &ModelSpec,
    models: &[ParamVector],
    tasks: &[TaskSplits],
    split: Split,
) -> Result<Vec<TaskMetrics>> {
    if models.len() != 1 && models.len() != tasks.len() {
        return Err(Error::InvalidConfig(format!(
            "{} models cannot be paired with {} tasks",
            models.len(),
            tasks.len()
        )));
    }
    tasks
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let data = t.get(split)?;
            let w = if models.len() == 1 { &models[0] } else { &models[k] };
            Ok(TaskMetrics {
                task_id: t.task_id(),
                loss: empirical_loss(spec, w, data)?,
                accuracy: accuracy(spec, w, data)?,
            })
        })
        .collect()
}

/// Unweighted mean accuracy over tasks.
pub fn mean_accuracy(metrics: &[TaskMetrics]) -> Option<f64> {
    let acc: Option<Vec<f64>> = metrics.iter().map(|m| m.accuracy).collect();
    acc.filter(|a| !a.is_empty())
        .map(|a| a.iter().sum::<f64>() / a.len() as f64)
}

pub fn mean_loss(metrics: &[TaskMetrics]) -> f64 {
    metrics.iter().map(|m| m.loss).sum::<f64>() / metrics.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Example, TaskDataset};
    use crate::objectives::ModelFamily;

    fn task(id: usize, with_test: bool) -> TaskSplits {
        let d = TaskDataset::new(
            id,
            vec![Example::new(vec![1.0], 1.0), Example::new(vec![-1.0], 0.0)],
        )
        .unwrap();
        TaskSplits {
            train: d.clone(),
            val: None,
            test: with_test.then_some(d),
        }
    }

    #[test]
    fn broadcast_and_paired_modes() {
        let spec = ModelSpec::new(ModelFamily::LogisticRegression, 1);
        let tasks = vec![task(0, true), task(1, true)];
        let good = ParamVector::new(vec![5.0, 0.0]).unwrap();
        let bad = ParamVector::new(vec![-5.0, 0.0]).unwrap();
        let global = evaluate(&spec, std::slice::from_ref(&good), &tasks, Split::Test).unwrap();
        assert_eq!(mean_accuracy(&global), Some(1.0));
        let paired = evaluate(&spec, &[good, bad], &tasks, Split::Test).unwrap();
        assert_eq!(paired[0].accuracy, Some(1.0));
        assert_eq!(paired[1].accuracy, Some(0.0));
        assert_eq!(mean_accuracy(&paired), Some(0.5));
    }

    #[test]
    fn missing_split_is_an_error() {
        let spec = ModelSpec::new(ModelFamily::LogisticRegression, 1);
        let tasks = vec![task(0, true), task(1, false)];
        let err = evaluate(&spec, &[ParamVector::zeros(2)], &tasks, Split::Test).unwrap_err();
        assert_eq!(err, Error::SplitMissing { task_id: 1 });
        assert!(evaluate(&spec, &[ParamVector::zeros(2)], &tasks, Split::Val).is_err());
    }

    #[test]
    fn model_count_must_match() {
        let spec = ModelSpec::new(ModelFamily::LogisticRegression, 1);
        let tasks = vec![task(0, true), task(1, true), task(2, true)];
        let models = vec![ParamVector::zeros(2); 2];
        assert!(evaluate(&spec, &models, &tasks, Split::Train).is_err());
    }
}
