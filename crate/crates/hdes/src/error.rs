//! Crate-wide error type.

/// Errors produced anywhere in the solver pipeline.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// A caller violated a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),
    /// An argument is outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A problem file failed to parse; positions are 1-based.
    #[error("{line}:{col}: {msg}")]
    Parse { line: u32, col: u32, msg: String },
    /// Arithmetic evaluation of an expression failed (e.g. division by zero).
    #[error("evaluation error: {0}")]
    Eval(String),
    /// I/O or serialization failure, reported with context.
    #[error("{0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn eval(msg: impl Into<String>) -> Self {
        Error::Eval(msg.into())
    }
}
