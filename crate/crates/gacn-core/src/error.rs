//! Error types shared across the crate.
//!
//! Recoverable conditions (bad input files, bad configuration, numeric
//! blow-ups during training) surface as [`Error`]. Contract violations such
//! as shape mismatches panic, as they indicate caller bugs.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("empty graph: {0}")]
    EmptyGraph(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value produced by op `{op}`")]
    NonFinite { op: &'static str },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
