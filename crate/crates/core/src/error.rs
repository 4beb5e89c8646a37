use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SbmError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("CFL condition violated: dt = {dt} exceeds dx^2/2 = {limit}")]
    Cfl { dt: f64, limit: f64 },

    #[error("non-finite field value in replica {replica} at cell {cell}, t = {t}")]
    NonFinite { replica: u64, cell: usize, t: f64 },

    #[error("point x = {x} lies outside the usable domain [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },

    #[error("test function is not finite at x = {x}")]
    NonFiniteTestFn { x: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl SbmError {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        SbmError::InvalidParam {
            name,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for SbmError {
    fn from(e: std::io::Error) -> Self {
        SbmError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SbmError>;
