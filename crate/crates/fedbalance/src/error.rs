//! Crate-wide error type.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// Architecture construction failed (incompatible layer shapes, bad dims).
    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    /// Tensor or parameter-vector dimensions do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A forward pass produced a non-finite activation.
    #[error("non-finite activation in layer {layer} ({kind})")]
    NonFiniteActivation { layer: usize, kind: String },

    /// A gradient vector contained NaN or infinity.
    #[error("non-finite gradient: {0}")]
    NonFiniteGradient(String),

    /// Retained activations do not correspond to the given model/batch.
    #[error("stale or mismatched activations: {0}")]
    StaleTape(String),

    /// Invalid argument to a library operation.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// IDX file could not be parsed.
    #[error("idx: {0}")]
    Idx(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// Config file violated the grammar or a domain constraint.
    #[error("config {path}:{line}: {message}")]
    Config {
        path: String,
        line: usize,
        message: String,
    },

    /// No architecture registered under this name.
    #[error("unknown architecture `{0}`")]
    UnknownArch(String),

    /// A client failed during a federated round.
    #[error("round {round}, client {client}: {source}")]
    ClientFailed {
        round: usize,
        client: usize,
        #[source]
        source: Box<Error>,
    },

    /// CSV metrics file could not be parsed back into records.
    #[error("csv {path}:{line}: {message}")]
    Csv {
        path: String,
        line: usize,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
