use thiserror::Error;

/// Errors raised by model construction, the engines and the diagnostics.
///
/// Block indices in messages are 1-based.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid decomposition: {0}")]
    InvalidDecomposition(String),

    #[error("block index {index} out of range (model has {blocks} blocks)")]
    BlockIndex { index: usize, blocks: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value at position {0}")]
    NonFinite(usize),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("conditioning event for block {block} has zero probability mass")]
    ZeroMass { block: usize },

    #[error("divergent expectation in block {block}: {detail}")]
    DivergentExpectation { block: usize, detail: String },

    #[error("support violation: {0}")]
    SupportViolation(String),

    #[error("exp(h) is not integrable against the base density on the working grid")]
    NotIntegrable,

    #[error("objective requires normalized target")]
    UnnormalizedTarget,

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
