//! Per-task datasets and splits.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{Purpose, Streams};

/// One labelled example. Binary labels are `0.0`/`1.0`; regression labels are raw reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: f64,
}

impl Example {
    pub fn new(features: Vec<f64>, label: f64) -> Self {
        Self { features, label }
    }
}

/// A task's private examples. Always nonempty with a single feature width.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    task_id: usize,
    examples: Vec<Example>,
    width: usize,
}

impl TaskDataset {
    pub fn new(task_id: usize, examples: Vec<Example>) -> Result<Self> {
        let width = examples
            .first()
            .ok_or_else(|| Error::InvalidData(format!("task {task_id} has no examples")))?
            .features
            .len();
        for (i, ex) in examples.iter().enumerate() {
            if ex.features.len() != width {
                return Err(Error::InvalidData(format!(
                    "task {task_id} example {i} has width {} (expected {width})",
                    ex.features.len()
                )));
            }
            if !ex.label.is_finite() || ex.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "task {task_id} example {i} has a non-finite value"
                )));
            }
        }
        Ok(Self {
            task_id,
            examples,
            width,
        })
    }

    /// Scalar observations with no label, for mean estimation.
    pub fn from_points(task_id: usize, points: &[Vec<f64>]) -> Result<Self> {
        Self::new(
            task_id,
            points.iter().map(|p| Example::new(p.clone(), 0.0)).collect(),
        )
    }

    pub fn task_id(&self) -> usize {
        self.task_id
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn with_task_id(mut self, task_id: usize) -> Self {
        self.task_id = task_id;
        self
    }

    /// Replace-one neighbour: the same dataset with example `index` swapped out.
    pub fn replace_example(&self, index: usize, example: Example) -> Result<Self> {
        if index >= self.len() {
            return Err(Error::InvalidData(format!(
                "example index {index} out of range for task {}",
                self.task_id
            )));
        }
        let mut examples = self.examples.clone();
        examples[index] = example;
        Self::new(self.task_id, examples)
    }
}

/// Checks that a federation has ids `0..m` in order and a common feature width.
pub fn validate_federation(tasks: &[TaskDataset]) -> Result<()> {
    let width = tasks
        .first()
        .ok_or_else(|| Error::InvalidData("federation has no tasks".to_string()))?
        .width();
    for (k, t) in tasks.iter().enumerate() {
        if t.task_id() != k {
            return Err(Error::InvalidData(format!(
                "task at position {k} has id {}",
                t.task_id()
            )));
        }
        if t.width() != width {
            return Err(Error::InvalidData(format!(
                "task {k} has feature width {} (expected {width})",
                t.width()
            )));
        }
    }
    Ok(())
}

/// The federation obtained by replacing task `k`'s whole dataset.
pub fn neighboring_federation(
    tasks: &[TaskDataset],
    k: usize,
    replacement: TaskDataset,
) -> Result<Vec<TaskDataset>> {
    if k >= tasks.len() {
        return Err(Error::InvalidData(format!("no task {k} in federation")));
    }
    let mut out = tasks.to_vec();
    out[k] = replacement.with_task_id(k);
    validate_federation(&out)?;
    Ok(out)
}

/// Train/validation/test partition of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSplits {
    pub train: TaskDataset,
    pub val: Option<TaskDataset>,
    pub test: Option<TaskDataset>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl TaskSplits {
    pub fn task_id(&self) -> usize {
        self.train.task_id()
    }

    pub fn get(&self, split: Split) -> Result<&TaskDataset> {
        match split {
            Split::Train => Some(&self.train),
            Split::Val => self.val.as_ref(),
            Split::Test => self.test.as_ref(),
        }
        .ok_or(Error::SplitMissing {
            task_id: self.task_id(),
        })
    }

    /// Shuffles with the task's split stream and cuts 80/10/10.
    ///
    /// Validation and test each receive `floor(n / 10)` examples; the rest
    /// train. Tasks with fewer than ten examples get no validation or test split.
    pub fn split(dataset: &TaskDataset, streams: &Streams) -> Result<Self> {
        let n = dataset.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut streams.stream(Purpose::Split, dataset.task_id() as u64, 0));
        let holdout = n / 10;
        let n_train = n - 2 * holdout;
        let take = |idx: &[usize]| -> Result<Option<TaskDataset>> {
            if idx.is_empty() {
                return Ok(None);
            }
            let ex = idx.iter().map(|&i| dataset.examples()[i].clone()).collect();
            TaskDataset::new(dataset.task_id(), ex).map(Some)
        };
        Ok(Self {
            train: take(&order[..n_train])?.expect("train split is nonempty"),
            val: take(&order[n_train..n_train + holdout])?,
            test: take(&order[n_train + holdout..])?,
        })
    }
}

pub fn train_sets(splits: &[TaskSplits]) -> Vec<TaskDataset> {
    splits.iter().map(|s| s.train.clone()).collect()
}

pub fn split_sets(splits: &[TaskSplits], split: Split) -> Result<Vec<TaskDataset>> {
    splits.iter().map(|s| s.get(split).cloned()).collect()
}
