use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("ego pose ({x:.2}, {y:.2}) lies outside the scene bounds")]
    OutOfScene { x: f64, y: f64 },
    #[error("format error: {0}")]
    Format(String),
    #[error("checksum mismatch: expected {expected}, found {found}")]
    Checksum { expected: String, found: String },
    #[error("provenance error: {0}")]
    Provenance(String),
    #[error("invalid artifact: {0}")]
    InvalidArtifact(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("refusing to overwrite existing path {0} (pass --force)")]
    PathExists(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::PathExists(_) => 2,
            Error::Numerical(_) => 4,
            _ => 3,
        }
    }
}
