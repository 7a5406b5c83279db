use std::path::PathBuf;

use thiserror::Error;

use crate::epiweek::EpiWeek;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("registry: {0}")]
    Registry(String),

    #[error("excluded geography {0}")]
    ExcludedGeography(String),

    #[error("unknown geography {0}")]
    UnknownGeography(String),

    #[error("invalid value in {context}: {message}")]
    InvalidValue { context: String, message: String },

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("misaligned week indices: {0}")]
    Misaligned(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("insufficient history for {geo} at {week}: need {needed} weeks, have {available}")]
    InsufficientHistory {
        geo: String,
        week: EpiWeek,
        needed: usize,
        available: usize,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("lasso did not converge after {iterations} sweeps (max change {max_change:e})")]
    NotConverged { iterations: usize, max_change: f64 },

    #[error("matrix not positive definite after {attempts} jitter attempts")]
    NotPositiveDefinite { attempts: usize },

    #[error("{geo} at {week}: {source}")]
    AtWeek {
        geo: String,
        week: EpiWeek,
        #[source]
        source: Box<Error>,
    },

    #[error("look-ahead violation: {0}")]
    LookAhead(String),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidValue {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    /// Attach the (geo, week) where a pipeline step failed.
    pub fn at(self, geo: impl Into<String>, week: EpiWeek) -> Self {
        match self {
            e @ Error::AtWeek { .. } => e,
            e => Error::AtWeek {
                geo: geo.into(),
                week,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
