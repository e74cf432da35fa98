//! Crate-wide error type.

/// Errors surfaced by the library.
///
/// The CLI maps these onto process exit codes: configuration problems are
/// usage errors, data/checkpoint problems are data errors, and degenerate
/// numerical situations (zero vectors, NaN inputs) are numeric errors.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input that makes the requested operation mathematically undefined,
    /// e.g. normalizing a zero vector or a NaN in a feature matrix.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Dimension disagreement between operands.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Invalid configuration value (out-of-range hyperparameter, bad flag combination).
    #[error("invalid config: {0}")]
    Config(String),

    /// Malformed or inconsistent dataset content (bad CSV cell, label out of range,
    /// empty class, missing fine labels).
    #[error("data error: {0}")]
    Data(String),

    /// Checkpoint file problems: version mismatch, truncated payload, shape disagreement.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A caller broke an API contract, e.g. reusing a backward tape after the
    /// encoder parameters changed.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
