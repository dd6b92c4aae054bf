use std::path::{Path, PathBuf};

use crate::harness::Manifest;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] loctrack_core::Error),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("malformed input: {0}")]
    Format(String),
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error("invalid scenario: {}", .0.join("; "))]
    InvalidScenario(Vec<String>),
    #[error("campaign aborted: {failed} of {total} runs failed")]
    Aborted { failed: usize, total: usize, manifest: Box<Manifest> },
    #[error("table does not fit figure {figure}: {reason}")]
    SchemaMismatch { figure: String, reason: String },
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::File { path: path.to_path_buf(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
