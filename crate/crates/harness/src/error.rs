use std::path::PathBuf;

use thiserror::Error;

/// Everything the harness can fail with.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {file}: {source}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },

    #[error(transparent)]
    Core(#[from] pmtl_core::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 for configuration and input problems, 3 for an
    /// infeasible privacy target, 4 for numeric failure, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        use pmtl_core::Error as E;
        match self {
            Self::Config(_) | Self::Parse { .. } | Self::Csv { .. } => 2,
            Self::Io { .. } => 1,
            Self::Core(E::InfeasiblePrivacy(_)) => 3,
            Self::Core(E::NonFinite { .. } | E::SingularSystem) => 4,
            Self::Core(_) => 2,
        }
    }
}
