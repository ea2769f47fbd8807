use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected} pixels, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: String, right: String },

    #[error("corrupt mask: {0}")]
    CorruptMask(String),

    #[error("non-finite or negative cost at ({row}, {col})")]
    InvalidCost { row: usize, col: usize },

    #[error("frame {frame} is not after previously processed frame {last}")]
    OutOfOrderFrame { frame: u32, last: u32 },

    #[error("unknown backend handle {0}")]
    UnknownHandle(u64),

    #[error("backend failure at frame {frame}: {message}")]
    Backend { frame: u32, message: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
