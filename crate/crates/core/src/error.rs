use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid genotype: {0}")]
    InvalidGenotype(String),

    #[error("invalid population state: {0}")]
    InvalidState(String),

    #[error("{what} too large: {size} exceeds cap {cap}")]
    SizeCap {
        what: &'static str,
        size: usize,
        cap: usize,
    },

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("moment hierarchy does not close with resampling (b = {0}); recombination and resampling together destroy moment closure beyond two sites")]
    ResamplingBreaksClosure(f64),

    #[error("absorbing state: total event rate is zero")]
    Absorbing,

    #[error("key mismatch: {0}")]
    KeyMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
