use std::path::PathBuf;

use thiserror::Error;

use crate::diffcore::DiffError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Diff(#[from] DiffError),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("configuration error in field(s) {}: {message}", fields.join(", "))]
    Config {
        fields: Vec<String>,
        message: String,
    },

    #[error("root finding failed: {0}")]
    RootFinding(String),

    #[error("root finding failed in dimension {dim}: {message}")]
    Inverse { dim: usize, message: String },

    #[error("non-finite value after stage {stage} ({name})")]
    NonFinite { stage: usize, name: &'static str },

    #[error("row {row}: {source}")]
    Row {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training aborted at epoch {epoch}: {source}")]
    Training {
        epoch: usize,
        report: Box<crate::training::TrainReport>,
        #[source]
        source: Box<Error>,
    },

    #[error("monotonicity violated: derivative {0} is not positive")]
    NotMonotone(f64),

    #[error("{0}")]
    Unsupported(String),

    #[error("column `{column}` not found in {}", path.display())]
    MissingColumn { path: PathBuf, column: String },

    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    BadCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_row(self, row: usize) -> Self {
        Error::Row {
            row,
            source: Box::new(self),
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            fields: vec![field.into()],
            message: message.into(),
        }
    }
}
