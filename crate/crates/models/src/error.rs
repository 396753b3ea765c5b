pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Core(#[from] nasp_core::Error),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("non-finite {what} at step {step}")]
    NonFinite { what: String, step: usize },

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("teacher weights changed during distillation (hash {before} -> {after})")]
    TeacherDrift { before: String, after: String },

    #[error("weights: {0}")]
    Weights(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl From<safetensors::SafeTensorError> for Error {
    fn from(e: safetensors::SafeTensorError) -> Self {
        Error::Weights(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Core(e.into())
    }
}

pub(crate) fn check_finite(value: f64, what: &str, step: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
            step,
        })
    }
}
