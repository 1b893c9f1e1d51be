#[derive(Debug, thiserror::Error)]
pub enum ExpertError {
    #[error(transparent)]
    Core(#[from] roadex_core::Error),
    #[error(transparent)]
    Nn(#[from] roadex_nn::NnError),
    #[error("no training samples: {0}")]
    NoTrainingSamples(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, ExpertError>;
