use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid UTF-8 at byte offset {offset}")]
    Decode { offset: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("token id {id} is outside the vocabulary (size {vocab_size})")]
    IdOutOfRange { id: u32, vocab_size: usize },
    #[error("input error: {0}")]
    Input(String),
    #[error("non-finite activation in {layer}")]
    Numeric { layer: String },
    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: usize },
    #[error("fold {fold} failed: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    /// True for errors caused by invalid configuration rather than bad data.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Fold { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
