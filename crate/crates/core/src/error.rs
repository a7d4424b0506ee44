use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed csv")]
    Csv(#[from] csv::Error),

    #[error("malformed json")]
    Json(#[from] serde_json::Error),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("parse error at record {record}: {message}")]
    Parse { record: usize, message: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("decision id {decision} out of range (decision_count = {decision_count})")]
    DecisionOutOfRange { decision: usize, decision_count: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid cost range [{lo}, {hi}]")]
    InvalidCostRange { lo: f64, hi: f64 },

    #[error("decision {0} has no training records")]
    EmptyArm(usize),

    #[error("binary coordinate {coord} holds non-binary value {value}")]
    NonBinary { coord: usize, value: f64 },

    #[error("covariance matrix is singular after flooring")]
    SingularCovariance,

    #[error("rank {rank} is below the requested {requested} components")]
    RankDeficient { rank: usize, requested: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("weight model does not match dataset: {0}")]
    ModelMismatch(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
