use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing data: {0}")]
    MissingData(String),
    #[error("no events")]
    NoEvents,
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("autodiff: {0}")]
    Graph(String),
    #[error("training failed: {0}")]
    Training(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Whether the error stems from bad or missing input data, as opposed to
    /// a failure while fitting a model.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Training(_) | Error::NonFinite(_) | Error::Graph(_))
    }
}
