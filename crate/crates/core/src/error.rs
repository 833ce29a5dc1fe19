use thiserror::Error;

use crate::fedalgo::RunHistory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// One or more configuration constraints were violated. Each entry names
    /// the offending key path or constraint.
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("graph is disconnected; eigenvalue 1 of the gossip matrix would not be simple")]
    Disconnected,

    #[error("partition failed after {attempts} attempts: some client received no samples; use more samples or a larger alpha")]
    EmptyShard { attempts: usize },

    #[error("non-finite value at {context}")]
    NonFinite { context: String },

    /// Training produced a non-finite model. `history` holds every record
    /// completed before the failure and the last good client models.
    #[error("run diverged: {detail}")]
    Diverged {
        detail: String,
        history: Box<RunHistory>,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(vec![msg.into()])
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

impl Error {
    /// Process exit status for the CLI: 2 for configuration problems,
    /// 3 for divergence, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::Disconnected | Error::EmptyShard { .. } => 2,
            Error::Json(e) if !e.is_io() => 2,
            Error::Diverged { .. } => 3,
            _ => 1,
        }
    }
}
