use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: String, detail: String },

    #[error("shape {shape:?} holds {expected} values but {actual} were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    /// An API was called outside of its contract (bad parameter, wrong root, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A loss or gradient became NaN or infinite.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
}

impl Error {
    pub(crate) fn dim(op: &str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op: op.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}
