//! Persistence and report plumbing.

pub mod golden;
pub mod model;
pub mod report;
pub mod weights;

use thiserror::Error;

use crate::fixedpoint::FxError;
use crate::network::NetworkError;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("weight image truncated: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },
    #[error("weight image has {found} trailing bytes after the last block")]
    TrailingBytes { found: usize },
    #[error("block {block} holds {words} words, capacity is {capacity}")]
    BlockCapacity {
        block: usize,
        words: usize,
        capacity: usize,
    },
    #[error("image has {blocks} blocks but the network has {neurons} neurons")]
    BlockCount { blocks: usize, neurons: usize },
    #[error("block {block}: expected {expected} words, found {found}")]
    BlockLength {
        block: usize,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Fx(#[from] FxError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub(crate) fn file_err(path: &std::path::Path, source: std::io::Error) -> IoError {
    IoError::File {
        path: path.display().to_string(),
        source,
    }
}
