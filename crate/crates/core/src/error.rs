use thiserror::Error;

use crate::model::ReorderDef;

/// Errors produced by the reorder detection library.
#[derive(Debug, Error)]
pub enum Error {
    /// A sequence state lacks the information a definition needs.
    #[error("invalid sequence state: {0}")]
    InvalidState(&'static str),

    /// Online detectors only track adjacent-pair definitions.
    #[error("definition {0} is not supported by online detectors")]
    UnsupportedDefinition(ReorderDef),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("line {line}: timestamp {ts} is earlier than the previous row ({prev})")]
    DecreasingTimestamp { line: u64, ts: f64, prev: f64 },

    /// Pearson correlation is undefined when either sample has zero variance.
    #[error("correlation is undefined: {0} has zero variance")]
    UndefinedCorrelation(&'static str),

    #[error("metric is undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("trace is empty")]
    EmptyTrace,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
