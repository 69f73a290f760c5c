use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The integration left the state space badly enough that it could not be
    /// projected back. `time` is set when the failure happened inside a
    /// time-stepping loop.
    #[error("numerical failure{}: {message}", .time.map(|t| format!(" at t = {t}")).unwrap_or_default())]
    NumericalFailure { message: String, time: Option<f64> },

    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::NumericalFailure {
            message: msg.into(),
            time: None,
        }
    }

    /// Attach a time-of-failure to a numerical failure; other variants pass through.
    pub fn at_time(self, t: f64) -> Self {
        match self {
            Error::NumericalFailure { message, .. } => Error::NumericalFailure {
                message,
                time: Some(t),
            },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
