use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] roadex_core::Error),
    #[error(transparent)]
    Nn(#[from] roadex_nn::NnError),
    #[error(transparent)]
    Expert(#[from] roadex_experts::ExpertError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {msg}")]
    Config { path: PathBuf, msg: String },
    #[error("missing {what}: {path} (run `{stage}` first)")]
    MissingInput {
        what: String,
        path: PathBuf,
        stage: &'static str,
    },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, CliError>;
