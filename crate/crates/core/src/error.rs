use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("infeasible scene: {0}")]
    InfeasibleScene(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty labeled split: fraction {fraction} of {total} segments rounds to zero")]
    EmptyLabeledSplit { fraction: f64, total: usize },

    #[error("parse error in segment '{segment_id}' at byte {offset}: {message}")]
    Parse {
        segment_id: String,
        offset: u64,
        message: String,
    },

    #[error("shape mismatch for tensor '{tensor}': expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        tensor: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("frames come from different segments ('{first}' vs '{other}')")]
    MixedSegments { first: String, other: String },

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss {
        step: usize,
        detail: String,
        /// EMA weights from before the failing step.
        last_good: Option<Box<crate::net::DetectorParams>>,
    },

    #[error("no ground truth boxes to evaluate against")]
    NoGroundTruth,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("singular design matrix: {0}")]
    SingularDesign(String),

    #[error("unknown recipe '{name}'; available: {available}")]
    UnknownRecipe { name: String, available: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config file: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
