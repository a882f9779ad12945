use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("degenerate control-point configuration (condition estimate {condition:.3e})")]
    DegenerateConfiguration { condition: f64 },

    #[error("invalid class id {0}")]
    InvalidLabel(u32),

    #[error("grid point ({x:.3}, {y:.3}) could not be inverted through the warp")]
    NonInvertible { x: f64, y: f64 },

    #[error("no loss term enabled")]
    NoLossEnabled,

    #[error("missing input required by the {0} loss")]
    MissingInput(&'static str),

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("no convergence after {0} steps")]
    NonConvergence(usize),

    #[error("malformed {kind} file: {reason}")]
    Format { kind: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn mismatch(expected: impl ToString, found: impl ToString) -> Error {
    Error::DimensionMismatch {
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
