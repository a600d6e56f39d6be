use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("degenerate row {row}: no nonzero entries")]
    DegenerateRow { row: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("calibration matrix is not row-stochastic: {0}")]
    Calibration(String),

    #[error("non-finite function value at probe {index} ({side})")]
    Probe { index: usize, side: &'static str },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("masking error: {0}")]
    Masking(String),

    #[error("non-finite loss in term `{term}` at epoch {epoch}, batch {batch}")]
    NonFinite {
        term: &'static str,
        epoch: usize,
        batch: usize,
    },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
