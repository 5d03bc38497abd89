use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("load error in {field}: {reason}")]
    Load { field: String, reason: String },

    #[error("partition error: class {class} needs {needed} samples but only {available} are available (deficit {deficit})", deficit = needed - available)]
    InsufficientSamples {
        class: usize,
        needed: usize,
        available: usize,
    },

    #[error("numeric error: non-finite activation in layer {layer}")]
    Numeric { layer: usize },

    #[error("degenerate input at node {node}: {reason}")]
    Degenerate { node: usize, reason: String },

    #[error("protocol error: architecture mismatch between node {a} and node {b}")]
    ArchitectureMismatch { a: usize, b: usize },

    #[error("round {round}, node {node}: {source}")]
    InRound {
        round: usize,
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("reporting error: {0}")]
    Report(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}
pub(crate) use config_err;
