use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("address out of range: {field} = {value} (limit {limit})")]
    AddressOutOfRange {
        field: &'static str,
        value: u64,
        limit: u64,
    },

    #[error("invalid configuration at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("infeasible mitigation configuration: {0}")]
    Infeasible(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("simulation aborted: {0}")]
    Aborted(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SimError {
    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        SimError::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
