use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input: wrong lengths, negative amounts, unknown ids.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Input outside the region where a quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    /// An iterative solver failed; the message carries its diagnostics.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("planning error: {0}")]
    Planning(String),

    #[error("construction error: {0}")]
    Construction(String),

    /// Schema or validation failure in a scenario config; `path` names the field.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by the caller's configuration rather than a run.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config { .. } | Error::Json(_) => true,
            Error::Step { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
