use std::path::PathBuf;

/// Errors raised by the selection toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A data file could not be turned into a dataset.
    #[error("{path}: {message}")]
    Ingest { path: PathBuf, message: String },

    /// Invalid task config, selection config, or flag combination.
    #[error("config error: {0}")]
    Config(String),

    #[error("render error: {0}")]
    Render(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    /// Transport or server failure talking to a model provider.
    #[error("backend error: {0}")]
    Backend(String),

    /// The provider answered, but none of the verbalizers could be found in it.
    #[error("extraction error: {message}; raw response: {raw}")]
    Extraction { message: String, raw: String },

    #[error("embedding lookup error: {0}")]
    Lookup(String),

    /// A backend failure tied to one candidate or test case.
    #[error("case {id}: {source}")]
    Case {
        id: usize,
        #[source]
        source: Box<Error>,
    },

    /// A backend failure tied to one best-of-n trial.
    #[error("trial {trial}: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn ingest(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Ingest {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad input or configuration rather than runtime failure.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Case { source, .. } | Error::Trial { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
