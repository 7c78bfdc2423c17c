//! Crate-wide error type with machine-parsable categories.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension mismatch between tensors.
    #[error("dimension: {0}")]
    Dimension(String),
    /// Index out of range (token ids, embedding rows, lattice cells).
    #[error("index: {0}")]
    Index(String),
    /// Non-finite value where a finite one is required.
    #[error("numerical: {0}")]
    Numerical(String),
    /// Malformed binary or text file.
    #[error("format: {0}")]
    Format(String),
    /// Bad configuration value or unknown key.
    #[error("config: {0}")]
    Config(String),
    /// Invalid operation parameter (e.g. FA count out of range).
    #[error("parameter: {0}")]
    Parameter(String),
    /// Work size exceeds a stated budget (e.g. path enumeration).
    #[error("size: {0}")]
    Size(String),
    /// Problem with a dataset, manifest, or utterance.
    #[error("data: {0}")]
    Data(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable category tag used as the CLI error prefix.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Index(_) => "index",
            Error::Numerical(_) => "numerical",
            Error::Format(_) => "format",
            Error::Config(_) => "config",
            Error::Parameter(_) => "parameter",
            Error::Size(_) => "size",
            Error::Data(_) => "data",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
