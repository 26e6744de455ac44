use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("bitstream truncated: decoder read past the end of the payload")]
    Truncated,

    #[error("invalid bitstream header: {0}")]
    Header(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn integrity(msg: impl Into<String>) -> Self {
        Error::Integrity(msg.into())
    }
}
