use thiserror::Error;

/// Errors raised by the library. Singular Jacobians and infinite condition
/// numbers are not errors; they are reported in-band as `f64::INFINITY`.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("multi-index has total degree {got}, expected {expected}")]
    DegreeMismatch { expected: u32, got: u32 },

    #[error("multinomial coefficient overflows u64 (degree {0})")]
    Overflow(u32),

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("invalid degree list: {0}")]
    InvalidDegrees(String),

    #[error("the zero system has no condition number")]
    ZeroSystem,

    #[error("point is not on the sphere or the Stiefel manifold (deviation {0:e})")]
    OffManifold(f64),

    #[error("chart coordinates outside the domain of the parametrization")]
    OutOfDomain,

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("serialization error: {0}")]
    Serde(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
