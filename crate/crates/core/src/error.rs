use thiserror::Error;

use crate::data::DataError;
use crate::graph::GraphError;
use crate::nn::NnError;
use crate::params::ParamsError;
use crate::strategies::StrategyError;

/// Crate-level error for operations that cross module boundaries.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("{0}")]
    Diverged(String),
    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
