use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("model evaluation failed: {0}")]
    ModelEvaluation(String),

    #[error("feedback loop is singular at {freq_hz} Hz (|1 + G_fb| = {magnitude:e})")]
    SingularLoop { freq_hz: f64, magnitude: f64 },

    #[error("no usable bins: {0}")]
    EmptyResult(String),

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("mode {index} not found near {freq_hz} Hz")]
    ModeNotFound { index: usize, freq_hz: f64 },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("corrupt dataset: {0}")]
    CorruptData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
