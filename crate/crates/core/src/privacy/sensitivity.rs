use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::vector::ParamVector;

/// Largest observed `||aggregate(D) - aggregate(D')||_2` over `trials` neighbouring pairs.
///
/// `neighbor_pair(trial)` must return two federations that differ in at most one
/// task's dataset; `aggregate` should run one noiseless aggregation round.
pub fn empirical_sensitivity_probe<A, P>(
    mut aggregate: A,
    mut neighbor_pair: P,
    trials: usize,
) -> Result<f64>
where
    A: FnMut(&[TaskDataset]) -> Result<ParamVector>,
    P: FnMut(usize) -> Result<(Vec<TaskDataset>, Vec<TaskDataset>)>,
{
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let (d, d_prime) = neighbor_pair(trial)?;
        if d.len() != d_prime.len() {
            return Err(Error::InvalidData(
                "neighbouring federations must have the same number of tasks".to_string(),
            ));
        }
        let differing = d.iter().zip(&d_prime).filter(|(a, b)| a != b).count();
        if differing > 1 {
            return Err(Error::InvalidData(format!(
                "federations differ in {differing} tasks; neighbours differ in at most one"
            )));
        }
        let diff = aggregate(&d)?.sub(&aggregate(&d_prime)?)?.l2_norm();
        worst = worst.max(diff);
    }
    Ok(worst)
}

/// Probe outcome next to the two candidate bounds on the aggregate's sensitivity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityReport {
    pub trials: usize,
    pub max_difference: f64,
    /// `gamma / divisor`: one clipped update of norm `gamma` moves the mean.
    pub standard_bound: f64,
    /// `2 gamma / divisor`: two opposite clipped updates.
    pub conservative_bound: f64,
}

impl SensitivityReport {
    /// Slack allowed before a bound counts as violated.
    pub const TOLERANCE: f64 = 1e-9;

    pub fn new(max_difference: f64, trials: usize, gamma: f64, divisor: f64) -> Self {
        Self {
            trials,
            max_difference,
            standard_bound: gamma / divisor,
            conservative_bound: 2.0 * gamma / divisor,
        }
    }

    pub fn standard_bound_violated(&self) -> bool {
        self.max_difference > self.standard_bound + Self::TOLERANCE
    }

    pub fn conservative_bound_violated(&self) -> bool {
        self.max_difference > self.conservative_bound + Self::TOLERANCE
    }
}
