//! Error taxonomy shared across the registration pipeline.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller handed us something that violates a precondition.
    #[error("invalid input: {0}")]
    Input(String),

    /// Input is syntactically valid but geometrically unusable
    /// (e.g. a cloud with zero radius).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    /// Pipeline stages disagree with each other (e.g. arena sized from a
    /// different histogram than the one being scattered). Always a bug.
    #[error("internal consistency violation: {0}")]
    InternalConsistency(String),

    #[error("resource exhausted: {0}")]
    Resource(String),
}

pub type Result<T> = std::result::Result<T, Error>;
