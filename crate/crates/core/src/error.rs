use std::path::PathBuf;

use thiserror::Error;

use crate::grid_env::{Action, Cell};

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid game config: {0}")]
    InvalidConfig(String),

    #[error("action {action:?} from {from} leaves the grid")]
    InvalidAction { from: Cell, action: Action },

    #[error("game is already over")]
    GameOver,

    #[error("no adversary-free path collects every reward and reaches the exit")]
    Unreachable,

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("transition model: {0}")]
    Model(String),

    #[error("no feasible plan within horizon {horizon} (t0 = {t0})")]
    Infeasible { t0: usize, horizon: usize },

    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
