use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input violates a documented precondition.
    #[error("invalid input: {0}")]
    Invalid(String),
    /// A computation could not produce a finite, defined result.
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Fxpf(#[from] fxpf::FxpfError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input rather than failed numerics or I/O.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid(_) | Error::Format { .. } | Error::Json(_)
        ) || matches!(
            self,
            Error::Fxpf(
                fxpf::FxpfError::Config(_)
                    | fxpf::FxpfError::TooFewElements { .. }
                    | fxpf::FxpfError::TooFewRows { .. }
                    | fxpf::FxpfError::Shape { .. }
            )
        )
    }
}
