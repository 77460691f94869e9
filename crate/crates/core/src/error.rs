use thiserror::Error;

/// Errors raised while reading or writing KTEN files.
#[derive(Debug, Error)]
pub enum KtenError {
    #[error("bad magic bytes: expected `KTEN`, found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported KTEN version {found} (this reader understands version 1)")]
    VersionMismatch { found: u8 },
    #[error("truncated KTEN data: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("KTEN record has {extra} trailing bytes after {expected} bytes of payload")]
    TrailingBytes { expected: usize, extra: usize },
    #[error("KTEN header declares an invalid shape: {0}")]
    InvalidShape(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("mode {mode} out of range for a tensor of order {order}")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("dense materialization of dimension {dim} exceeds the cap of {cap}")]
    DenseCapExceeded { dim: usize, cap: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain violation{}: W entry {value} at multi-index {index:?} is not strictly positive",
        .iteration.map(|t| format!(" at iteration {t}")).unwrap_or_default())]
    DomainViolation {
        index: Vec<usize>,
        value: f64,
        iteration: Option<usize>,
    },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("line search step underflow on block {block} (step {step:e}); gradient and objective disagree")]
    StepUnderflow { block: usize, step: f64 },

    #[error("{what} did not converge within {iterations} iterations (residual {residual:e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("operator is too ill-conditioned (condition estimate {0:e})")]
    IllConditioned(f64),

    #[error("simulation blew up at step {step} (|u| = {magnitude:e})")]
    BlowUp { step: usize, magnitude: f64 },

    #[error("numerical drift {drift:e} exceeds tolerance {tolerance:e}")]
    NumericalDrift { drift: f64, tolerance: f64 },

    #[error(transparent)]
    Kten(#[from] KtenError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
