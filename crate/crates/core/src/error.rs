use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

use crate::estimation::ParamVector;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: String,
        actual: String,
    },

    #[error("matrix is not positive definite (smallest pivot {pivot:e})")]
    NotPositiveDefinite { pivot: f64 },

    #[error("matrix is not symmetric: |a[{row},{col}] - a[{col},{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("price {price} is at or below the floor {floor}")]
    NonpositivePrice { price: f64, floor: f64 },

    #[error("degenerate drift: rho = {rho:e} is at or below the floor {floor:e}")]
    DegenerateDrift { rho: f64, floor: f64 },

    #[error("gradient ascent diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        last_finite: Box<ParamVector>,
    },

    #[error("singular design matrix for node {node}")]
    SingularDesign { node: String },

    #[error("insufficient history: need {required} observations, have {available}")]
    InsufficientHistory { required: usize, available: usize },

    #[error("{path}:{line}: column {column}: {message}")]
    Parse {
        path: String,
        line: u64,
        column: String,
        message: String,
    },

    #[error("{path}:{line}: unknown node {node:?}")]
    UnknownNode {
        path: String,
        line: u64,
        node: String,
    },

    #[error("duplicate record for {what} on {date} at node {node}")]
    Duplicate {
        what: &'static str,
        date: NaiveDate,
        node: String,
    },

    #[error("no date has complete data for every node")]
    EmptyDataset,

    #[error("date {0} is not in the data")]
    UnknownDate(NaiveDate),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("on {date}: {source}")]
    OnDay {
        date: NaiveDate,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn on_day(self, date: NaiveDate) -> Self {
        Error::OnDay {
            date,
            source: Box::new(self),
        }
    }

    /// Short machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::NotSymmetric { .. } => "not_symmetric",
            Error::NonpositivePrice { .. } => "nonpositive_price",
            Error::DegenerateDrift { .. } => "degenerate_drift",
            Error::Diverged { .. } => "diverged",
            Error::SingularDesign { .. } => "singular_design",
            Error::InsufficientHistory { .. } => "insufficient_history",
            Error::Parse { .. } => "parse",
            Error::UnknownNode { .. } => "unknown_node",
            Error::Duplicate { .. } => "duplicate",
            Error::EmptyDataset => "empty_dataset",
            Error::UnknownDate(_) => "unknown_date",
            Error::InvalidConfig(_) => "invalid_config",
            Error::InvalidInput(_) => "invalid_input",
            Error::OnDay { source, .. } => source.kind(),
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
        }
    }

    /// Process exit code: 2 for input/file problems, 1 for numeric or validation failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::UnknownNode { .. }
            | Error::Duplicate { .. }
            | Error::EmptyDataset
            | Error::UnknownDate(_)
            | Error::InvalidConfig(_)
            | Error::Io { .. }
            | Error::Json { .. } => 2,
            Error::OnDay { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
