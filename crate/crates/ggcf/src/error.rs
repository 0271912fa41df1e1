//! Error types shared across the crate.

use std::path::PathBuf;

/// Unified error type for manifold operations, data handling, training and the CLI.
#[derive(Debug, thiserror::Error)]
pub enum GgcfError {
    /// Operands have incompatible or unsupported dimensions.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Input violates a mathematical precondition (off-manifold point, negative weight, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A computation produced non-finite values or otherwise left the valid numeric range.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Input that is structurally valid but unusable (no interactions, all-zero weights, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A record in a data file could not be parsed.
    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Invalid configuration or command-line usage.
    #[error("config error: {0}")]
    Config(String),

    /// A stored artifact cannot be used with the current build or model shape.
    #[error("incompatible artifact: {0}")]
    Incompatible(String),
}

pub type Result<T> = std::result::Result<T, GgcfError>;

impl GgcfError {
    /// Process exit code for the CLI: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            GgcfError::Config(_) => 1,
            GgcfError::Numeric(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GgcfError::Io {
            path: path.into(),
            source,
        }
    }
}
