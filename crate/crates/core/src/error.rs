use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric domain error in {op}: non-finite input")]
    NumericDomain { op: &'static str },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("batch-size error: {op} needs at least {min} rows, got {got}")]
    BatchSize {
        op: &'static str,
        min: usize,
        got: usize,
    },
    #[error("empty input to {0}")]
    EmptyInput(&'static str),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("vocabulary error: {0}")]
    Vocabulary(String),
    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("range error: {0}")]
    Range(String),
    #[error("stratification error: {0}")]
    Stratification(String),
    #[error("coverage error: {0}")]
    Coverage(String),
    #[error("negative sampling error: {0}")]
    NegativeSampling(String),
    #[error("missing file {path}: {source}")]
    MissingFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// True for errors caused by bad user input or configuration rather than
    /// failures while doing the work.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Schema { .. }
                | Error::Range(_)
                | Error::Format(_)
                | Error::Vocabulary(_)
                | Error::MissingFile { .. }
                | Error::Json(_)
                | Error::Stratification(_)
                | Error::Coverage(_)
        )
    }
}
