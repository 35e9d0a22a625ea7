use std::path::PathBuf;

use thiserror::Error;

use crate::network::WeightId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("weight address {0} is out of range for this network")]
    Address(WeightId),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("SMT emission error: {0}")]
    Emission(String),

    #[error("unsupported solver value for {name}: {value}")]
    UnsupportedValue { name: String, value: String },

    #[error("malformed solver output: {0}")]
    SolverOutput(String),

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
