//! Crate-wide error type and exit-code mapping for the CLI.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("wrap weight out of domain: {0}")]
    WeightDomain(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("probability error: {0}")]
    Probability(String),

    #[error("degenerate class: {0}")]
    DegenerateClass(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("metric '{metric}' incompatible with '{head}' output head")]
    IncompatibleMetric { metric: String, head: String },

    #[error("training aborted at epoch {epoch}, batch {batch}: {detail}")]
    TrainingAborted {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("config validation failed:\n{}", .0.join("\n"))]
    Validation(Vec<String>),

    #[error("parse error at row {row}, column {col}: {detail}")]
    CsvParse {
        row: usize,
        col: String,
        detail: String,
    },

    #[error("I/O error on {}: {source}", path.display())]
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

    /// Exit-code contract: 0 success, 1 validation, 2 numeric/assertion, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArchitecture(_)
            | Error::Validation(_)
            | Error::CsvParse { .. }
            | Error::IncompatibleMetric { .. }
            | Error::Label(_)
            | Error::DegenerateClass(_) => 1,
            Error::ShapeMismatch(_)
            | Error::Numeric(_)
            | Error::WeightDomain(_)
            | Error::Probability(_)
            | Error::Domain(_)
            | Error::TrainingAborted { .. } => 2,
            Error::Io { .. } => 3,
        }
    }
}
