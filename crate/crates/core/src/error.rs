use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("trajectory escaped the guard bound {bound} at t = {time}")]
    TrajectoryEscape { time: f64, bound: f64 },

    #[error("transversality violated: {0}")]
    Transversality(String),

    #[error("singular Jacobian of the coordinate change at ({0}, {1})")]
    SingularJacobian(f64, f64),

    #[error("normal form internal consistency failure: {0}")]
    Internal(String),

    #[error("non-finite value in field `{0}`")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
