//! Federation hyperparameters.

use crate::error::{Error, Result};
use crate::privacy::SensitivityConvention;

/// Local minibatch size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BatchSize {
    #[default]
    Full,
    Fixed(usize),
}

/// Hyperparameters of one federated run.
///
/// Losses are sums over examples, so `eta` has to shrink as tasks get larger.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    /// Number of tasks `m`.
    pub tasks: usize,
    /// Tasks sampled per round `q`.
    pub sampled: usize,
    /// Communication rounds `T`.
    pub rounds: usize,
    /// Local SGD steps per round `E`.
    pub local_steps: usize,
    /// Mean-regularization weight.
    pub lambda: f64,
    /// Learning rate.
    pub eta: f64,
    /// Clip bound on each transmitted update. `f64::INFINITY` disables clipping.
    pub gamma: f64,
    /// Per-coordinate std of the aggregation noise.
    pub sigma: f64,
    pub delta: f64,
    /// When set, `sigma` is replaced by the calibrated value (see [`FederationConfig::resolved`]).
    pub epsilon_target: Option<f64>,
    pub seed: u64,
    pub batch_size: BatchSize,
    pub sensitivity: SensitivityConvention,
    /// Start every task from the same initial model.
    pub identical_init: bool,
}

impl FederationConfig {
    /// Defaults for an `m`-task federation with full participation and `delta = 1/m`.
    pub fn new(tasks: usize) -> Self {
        Self {
            tasks,
            sampled: tasks,
            rounds: 10,
            local_steps: 5,
            lambda: 1.0,
            eta: 0.01,
            gamma: 1.0,
            sigma: 0.0,
            delta: if tasks > 1 { 1.0 / tasks as f64 } else { 0.5 },
            epsilon_target: None,
            seed: 0,
            batch_size: BatchSize::Full,
            sensitivity: SensitivityConvention::Standard,
            identical_init: false,
        }
    }

    /// Sampling rate `p = q/m`.
    pub fn sampling_rate(&self) -> f64 {
        self.sampled as f64 / self.tasks as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.tasks == 0 {
            return bad("m must be at least 1".into());
        }
        if self.sampled == 0 || self.sampled > self.tasks {
            return bad(format!("q = {} must lie in [1, m = {}]", self.sampled, self.tasks));
        }
        if self.rounds == 0 {
            return bad("T must be at least 1".into());
        }
        if self.local_steps == 0 {
            return bad("E must be at least 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda = {} must be finite and >= 0", self.lambda));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad(format!("eta = {} must be finite and >= 0", self.eta));
        }
        if !(self.gamma > 0.0) {
            return bad(format!("gamma = {} must be > 0", self.gamma));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma = {} must be finite and >= 0", self.sigma));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta = {} must lie in (0, 1)", self.delta));
        }
        if let Some(eps) = self.epsilon_target {
            if !(eps > 0.0) {
                return bad(format!("epsilon target {eps} must be > 0"));
            }
        }
        if let BatchSize::Fixed(0) = self.batch_size {
            return bad("batch size must be at least 1".into());
        }
        Ok(())
    }

    /// Validated copy with `sigma` calibrated from `epsilon_target` when one is set.
    pub fn resolved(&self) -> Result<Self> {
        self.validate()?;
        let mut out = self.clone();
        if let Some(eps) = self.epsilon_target {
            out.sigma = crate::privacy::sigma_for_epsilon(eps, self)?;
        }
        Ok(out)
    }
}
