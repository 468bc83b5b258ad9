//! Experiment harness: configuration files, synthetic federations, CSV task
//! directories, trace files and the privacy-utility sweep.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiment;
pub mod ingest;
pub mod probe;
pub mod synthetic;
pub mod trace_csv;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use experiment::SolverKind;
