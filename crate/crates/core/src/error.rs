use thiserror::Error;

/// Errors produced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("truncated input while reading {what}")]
    Truncated { what: String },

    #[error("malformed data: {0}")]
    Format(String),

    #[error("layer {index}: unknown layer type {kind:?}")]
    UnknownLayer { index: usize, kind: String },

    #[error("layer {index}: {message}")]
    ShapeChain { index: usize, message: String },

    #[error("target out of range: {0}")]
    Target(String),

    #[error("unsupported network topology: {0}")]
    Topology(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("non-finite value encountered at step {step}")]
    NonFinite { step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(
        context: &'static str,
        expected: impl std::fmt::Display,
        found: impl std::fmt::Display,
    ) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// True for errors caused by numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }
}
