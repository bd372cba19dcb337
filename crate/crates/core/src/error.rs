use thiserror::Error;

/// Errors raised by the engine. Apart from `Io` these are input-validation
/// failures; numerical trouble inside a sample is counted in the statistics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid market parameters: {0}")]
    InvalidMarket(String),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("unsupported method/payoff combination: {0}")]
    Unsupported(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("rate fit failed: {0}")]
    Fit(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
