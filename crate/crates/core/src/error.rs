use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Register size outside the supported range.
    #[error("capacity error: {0}")]
    Capacity(String),

    /// Non-finite angle, logit or similar numeric input.
    #[error("numeric input error: {0}")]
    Numeric(String),

    /// Qubit index out of range, or a CZ with control == target.
    #[error("wiring error: {0}")]
    Wiring(String),

    /// Vector or grid lengths that do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Several configuration problems collected in one pass.
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    ConfigList(Vec<String>),

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// Binary container problems (bad magic, truncation, count mismatch).
    #[error("format error in {}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    #[error("range error: {0}")]
    Range(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
