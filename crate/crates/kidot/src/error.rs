use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] kidot_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: corrupt file: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("{path}: unsupported format version {found} (expected {expected})")]
    Version { path: PathBuf, found: u32, expected: u32 },
    #[error("config: {0}")]
    Config(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("training failed: {0}")]
    Training(#[from] Box<kidot_core::training::TrainFailure>),
}

impl Error {
    /// True for divergence and non-finite values, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Core(e) => e.is_numerical(),
            Error::Training(f) => f.error.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Error {
        Error::Corrupt {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
