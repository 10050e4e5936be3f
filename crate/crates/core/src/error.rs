use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("duplicate id {id:?} at visit {visit}")]
    DuplicateId { visit: usize, id: String },

    #[error("non-binary value {value} for {column:?} at visit {visit}")]
    NonBinary {
        visit: usize,
        column: String,
        value: f64,
    },

    #[error("partition error: {0}")]
    Partition(String),

    #[error("continuity violated: id {id:?} at visit {visit} is absent from visit {prev}")]
    ContinuityViolated { visit: usize, prev: usize, id: String },

    #[error("event exclusion violated: id {id:?} had an event at visit {event_visit} but appears at visit {visit}")]
    ExclusionViolated {
        id: String,
        event_visit: usize,
        visit: usize,
    },

    #[error("visit {visit} out of range 1..={max}")]
    VisitOutOfRange { visit: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("single-class labels: at least one positive and one negative are required")]
    SingleClass,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("solver did not converge within {iterations} iterations (max KKT violation {violation:.3e})")]
    NoConvergence { iterations: usize, violation: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("gradient not available for model kind {0}")]
    UnsupportedGradient(&'static str),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("estimator for feature {feature:?} failed: {source}")]
    Estimator {
        feature: String,
        #[source]
        source: Box<Error>,
    },

    #[error("training failed at visit {visit}: {source}")]
    Training {
        visit: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown id {0:?}")]
    UnknownId(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn for_feature(self, feature: &str) -> Self {
        Error::Estimator {
            feature: feature.to_string(),
            source: Box::new(self),
        }
    }

    pub(crate) fn at_visit(self, visit: usize) -> Self {
        Error::Training {
            visit,
            source: Box::new(self),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
