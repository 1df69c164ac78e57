use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpeError {
    #[error("non-finite value: {0}")]
    NonFinite(f64),

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("degenerate signal: {0}")]
    Degenerate(String),

    #[error("eigensolver did not converge for a {0}x{0} matrix")]
    EigenFailure(usize),

    #[error("no estimate available: posterior phasor vanishes")]
    NoEstimate,

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NotConverged {
        iterations: usize,
        grad_norm: f64,
        iterate: Vec<f64>,
    },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, QpeError>;
