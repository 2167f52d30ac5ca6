use thiserror::Error;

/// Errors raised across the toolkit. Messages name the offending quantity.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("assembly error: {0}")]
    Assembly(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("degenerate band: {0}")]
    DegenerateBand(String),
    #[error("grid error: {0}")]
    Grid(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
