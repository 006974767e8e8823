use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure surfaced by the library. The CLI maps each variant onto a
/// distinct exit code (see [`Error::exit_code`]).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("structural error: {0}")]
    Structural(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("input error: {0}")]
    Input(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("model-config error: {0}")]
    ModelConfig(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }

    /// Stable process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dimension(_) => 10,
            Error::Structural(_) => 11,
            Error::Domain(_) => 12,
            Error::Contract(_) => 13,
            Error::Training(_) => 14,
            Error::Parse { .. } => 15,
            Error::Input(_) => 16,
            Error::Data(_) => 17,
            Error::ModelConfig(_) => 18,
            Error::Config(_) => 19,
            Error::Undefined(_) => 20,
            Error::Checkpoint(_) => 21,
            Error::Io(_) => 22,
        }
    }

    /// Short machine-readable class name used in one-line CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Structural(_) => "structural",
            Error::Domain(_) => "domain",
            Error::Contract(_) => "contract",
            Error::Training(_) => "training",
            Error::Parse { .. } => "parse",
            Error::Input(_) => "input",
            Error::Data(_) => "data",
            Error::ModelConfig(_) => "model-config",
            Error::Config(_) => "config",
            Error::Undefined(_) => "undefined",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
