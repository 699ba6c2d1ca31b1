use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, KacError>;

#[derive(Debug, Error)]
pub enum KacError {
    /// Malformed input such as non-finite coordinates or mismatched lengths.
    #[error("invalid input: {0}")]
    Input(String),

    /// A parameter lies outside the domain where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A quantity cannot be represented as a finite `f64`.
    #[error("overflow: {0}")]
    Overflow(String),

    /// The explicit drift update exceeded the configured cap; retry with a smaller step.
    #[error("step rejected at step {step}: drift displacement {displacement:.3e} exceeds cap {cap:.3e}, reduce dt")]
    StepRejected {
        step: u64,
        displacement: f64,
        cap: f64,
    },

    /// The particle state became non-finite.
    #[error("non-finite particle state at step {step}")]
    NonFinite { step: u64 },

    /// A configuration key is unknown or carries a value outside its domain.
    #[error("config key `{key}`: {allowed}")]
    Config { key: String, allowed: String },

    /// Snapshot format version not understood by this build.
    #[error("snapshot format version {found} is not supported (this build reads version {supported})")]
    Version { found: u32, supported: u32 },

    /// A snapshot or report file does not have the expected layout.
    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    /// A verification suite needs artifacts produced by an earlier command.
    #[error("missing prerequisite: {0}")]
    Prerequisite(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl KacError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KacError::Io {
            path: path.into(),
            source,
        }
    }
}
