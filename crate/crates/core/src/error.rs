use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid grid function: {0}")]
    InvalidFunction(String),

    #[error("negative value {value} at cell {cell}")]
    NegativeValue { cell: usize, value: f64 },

    #[error("polarizer is not grid-exact: {0}")]
    NotGridExact(String),

    #[error("invalid exponent: {0}")]
    InvalidExponent(String),

    #[error("unknown preset {0:?}")]
    UnknownPreset(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
