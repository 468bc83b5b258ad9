use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value produced: {context}")]
    NonFinite { context: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("privacy target infeasible: {0}")]
    InfeasiblePrivacy(String),

    #[error("privacy ledger has no RDP orders")]
    EmptyLedger,

    #[error("singular linear system")]
    SingularSystem,

    #[error("evaluation split missing for task {task_id}")]
    SplitMissing { task_id: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
