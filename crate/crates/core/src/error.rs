use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("symmetry violation: {what} (residual {residual:.3e})")]
    SymmetryViolation { what: &'static str, residual: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("decomposition unsupported: {0}")]
    UnsupportedDecomposition(&'static str),

    #[error("eigensolver failure: {0}")]
    SolverFailure(String),

    #[error("no mid-gap edge mode found")]
    NoMidGapMode,

    #[error("eigenvector tracking lost (best overlap {overlap:.4})")]
    TrackingLost { overlap: f64 },

    #[error("norm drift {drift:.3e} exceeds limit; last good time {last_good_time}")]
    NormDrift { drift: f64, last_good_time: f64 },

    #[error("invalid time step {0}")]
    InvalidStep(f64),

    #[error("control field has imaginary residual {residual:.3e}")]
    NonRealField { residual: f64 },

    #[error("basis not orthonormal (worst deviation {deviation:.3e})")]
    NonOrthonormalBasis { deviation: f64 },

    #[error("fixed-point iteration did not converge in {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("mode norm {norm} violates the statistics invariant")]
    NormViolation { norm: f64 },

    #[error("chain of {sites} sites is too short (need at least {required})")]
    ChainTooShort { sites: usize, required: usize },

    #[error("invalid control law: {0}")]
    InvalidLaw(String),

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("schema violation at `{path}`: {message}")]
    SchemaViolation { path: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

/// Coarse classification used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Numerical,
    Model,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            ConfigParse(_) | SchemaViolation { .. } | Io(_) | InvalidParameter(_) | InvalidLaw(_) => {
                ErrorClass::Config
            }
            NormDrift { .. }
            | InvalidStep(_)
            | SolverFailure(_)
            | NonRealField { .. }
            | NoConvergence { .. }
            | TrackingLost { .. }
            | NormViolation { .. } => ErrorClass::Numerical,
            SymmetryViolation { .. }
            | DimensionMismatch { .. }
            | IndexOutOfRange { .. }
            | UnsupportedDecomposition(_)
            | NoMidGapMode
            | NonOrthonormalBasis { .. }
            | ChainTooShort { .. } => ErrorClass::Model,
        }
    }

    pub fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::SchemaViolation {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
