use std::fmt;

/// Failure classes with their process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Other,
    Config,
    MissingStage,
    Numerical,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Other => 1,
            Kind::Config => 2,
            Kind::MissingStage => 3,
            Kind::Numerical => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Config,
            message: message.into(),
        }
    }

    pub fn missing(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::MissingStage,
            message: message.into(),
        }
    }

    pub fn other(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Other,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<nasp_core::Error> for CliError {
    fn from(e: nasp_core::Error) -> Self {
        let kind = match &e {
            nasp_core::Error::MissingFile(_) => Kind::MissingStage,
            nasp_core::Error::NonFinite(_) => Kind::Numerical,
            nasp_core::Error::UnknownPattern(_)
            | nasp_core::Error::UnknownAcceleration(_)
            | nasp_core::Error::InvalidShape { .. }
            | nasp_core::Error::ZeroBudget { .. } => Kind::Config,
            _ => Kind::Other,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<nasp_models::Error> for CliError {
    fn from(e: nasp_models::Error) -> Self {
        match e {
            nasp_models::Error::Core(inner) => inner.into(),
            nasp_models::Error::NonFinite { .. } => Self {
                kind: Kind::Numerical,
                message: e.to_string(),
            },
            nasp_models::Error::Config(_) => Self::config(e.to_string()),
            other => Self::other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::other(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::other(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::other(e.to_string())
    }
}

impl From<image::ImageError> for CliError {
    fn from(e: image::ImageError) -> Self {
        Self::other(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
