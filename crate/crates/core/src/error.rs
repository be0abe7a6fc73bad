use alloc::string::String;

use crate::operators::MeasurementKind;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite value produced by `{op}` (tape node {node})")]
    NonFinite { op: &'static str, node: usize },

    #[error("{what}: expected length {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("measurement kind mismatch: expected {expected:?}, found {found:?}")]
    KindMismatch {
        expected: MeasurementKind,
        found: MeasurementKind,
    },

    #[error("parameter layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("transport flow diverged at step {step} (state norm {norm:e})")]
    Diverged { step: usize, norm: f64 },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Diverged { .. })
    }
}
