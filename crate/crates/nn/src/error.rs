use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in parameter {name}")]
    NonFinite { name: String },
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("duplicate parameter {0:?}")]
    DuplicateParam(String),
    #[error("loss must be a scalar, got {0} values")]
    NotScalar(usize),
    #[error("{}: checksum mismatch (stored {stored}, computed {computed})", path.display())]
    Checksum {
        path: PathBuf,
        stored: String,
        computed: String,
    },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, NnError>;
