//! Error type shared across the suite.

use thiserror::Error;

/// Errors produced by transports, benchmark setup and report emission.
#[derive(Debug, Error)]
pub enum MeshError {
    /// A peer became unreachable or the message runtime failed.
    #[error("transport: {0}")]
    Transport(String),

    /// A frame exceeded the limits of the wire format.
    #[error("frame of {size} bytes exceeds the {limit} byte limit")]
    FrameTooLarge { size: u64, limit: u64 },

    /// Invalid run configuration (dimension mismatches, bad grids, ...).
    #[error("config: {0}")]
    Config(String),

    /// Numerical failure (zero pivot, singular diagonal).
    #[error("numerical: {0}")]
    Numerical(String),

    /// Benchmark result failed its self-check.
    #[error("validation: {0}")]
    Validation(String),

    /// Operation not supported by the selected backend.
    #[error("unsupported on this backend: {0}")]
    Unsupported(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MeshError>;
