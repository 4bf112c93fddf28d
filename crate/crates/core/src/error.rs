use thiserror::Error;

/// Errors produced by the core operators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid size {height}x{width}: {reason}")]
    Size {
        height: usize,
        width: usize,
        reason: &'static str,
    },
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    Shape {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid input: {0}")]
    Invalid(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
