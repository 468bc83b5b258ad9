//! Joint-differentially-private mean-regularized multi-task learning.
//!
//! Tasks keep personalized models `w_k` and only ever see the server's noisy
//! running mean `w_tilde`. Each round the server averages clipped model
//! updates from a sample of tasks and adds Gaussian noise; a Rényi-DP
//! accountant certifies the broadcast sequence.
//!
//! Module map:
//! - [`vector`], [`data`], [`config`], [`trace`], [`rng`]: shared types
//! - [`objectives`]: losses, gradients and the local objective
//! - [`privacy`]: clipping, the Gaussian mechanism and the accountant
//! - [`solvers`]: PMTL and the baselines
//! - [`oracles`]: independent references used by the tests

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod error;
pub mod objectives;
pub mod oracles;
pub mod privacy;
pub mod rng;
pub mod solvers;
pub mod trace;
pub mod vector;

pub use config::{BatchSize, FederationConfig};
pub use data::{Example, Split, TaskDataset, TaskSplits};
pub use error::{Error, Result};
pub use objectives::{ModelFamily, ModelSpec};
pub use privacy::{PrivacyLedger, SensitivityConvention};
pub use rng::Streams;
pub use solvers::SolverOutput;
pub use trace::{RoundRecord, RunTrace};
pub use vector::ParamVector;
