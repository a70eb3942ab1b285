use std::path::PathBuf;

use thiserror::Error;

use crate::mdp::{Goal, State};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside its documented domain.
    #[error("input domain error: {0}")]
    InputDomain(String),

    #[error("unknown environment `{env_id}` (known: {known})")]
    UnknownEnv { env_id: String, known: String },

    /// A malformed file; `line` is 1-based.
    #[error("{path}:{line}: {msg}")]
    Format {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("unsupported (state, goal) pair ({state}, {goal})")]
    UnsupportedPair { state: State, goal: Goal },

    #[error("training diverged at step {step}: {msg}")]
    Training { step: usize, msg: String },

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("enumeration infeasible: {0}")]
    Infeasible(String),

    #[error("support error: {0}")]
    Support(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::InputDomain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl AsRef<std::path::Path>, line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            line,
            msg: msg.into(),
        }
    }
}
