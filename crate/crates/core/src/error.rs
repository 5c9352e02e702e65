use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A distribution, system or experiment description is malformed or
    /// violates a precondition.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data the estimators cannot handle (non-finite points, empty
    /// histograms, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Too few reliable rows survived the occupancy guard to fit a line.
    #[error("insufficient data: {reliable} reliable rows, need at least {needed}")]
    InsufficientData { reliable: usize, needed: usize },

    /// The input's information dimension is (numerically) zero, so the
    /// relative loss is undefined.
    #[error("relative loss undefined: marginal dimension estimate {slope:.4} is below {threshold}")]
    UndefinedRelativeLoss { slope: f64, threshold: f64 },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// Wraps the error with the name of the stage that produced it.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with all context layers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
