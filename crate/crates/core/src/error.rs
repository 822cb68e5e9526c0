use thiserror::Error;

use crate::container::LoadError;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or skeleton layouts that do not fit together.
    #[error("structural error: {0}")]
    Structural(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("action label `{label}` is not in the canonical action set")]
    Retrieval { label: String },
    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing dependency: {0}")]
    MissingDependency(String),
    /// Input data that is missing, malformed or too small for the request.
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Argument(_) => 2,
            Error::MissingDependency(_) => 3,
            Error::Data(_) | Error::Load(_) | Error::Retrieval { .. } | Error::Structural(_) => 4,
            _ => 1,
        }
    }
}
