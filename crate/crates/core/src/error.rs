use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid shape {height}x{width}: {reason}")]
    InvalidShape {
        height: usize,
        width: usize,
        reason: &'static str,
    },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("sampling budget is zero for {height}x{width} at R={acceleration}")]
    ZeroBudget {
        height: usize,
        width: usize,
        acceleration: u32,
    },

    #[error("unknown mask pattern `{0}`")]
    UnknownPattern(String),

    #[error("unsupported acceleration R={0}")]
    UnknownAcceleration(u32),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what}: bad magic {found:?}, expected {expected:?}")]
    BadMagic {
        what: &'static str,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("{what}: unsupported version {found} (reader supports {supported})")]
    Version {
        what: &'static str,
        found: u32,
        supported: u32,
    },

    #[error("{what}: truncated or oversized file, expected {expected} bytes, got {actual}")]
    Length {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{0}")]
    Format(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("checkpoint config hash mismatch: manifest says {expected}, config hashes to {actual}")]
    HashMismatch { expected: String, actual: String },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
