use thiserror::Error;

/// Errors raised by the design toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate category probabilities at dose {dose}: {detail}")]
    DegenerateDose { dose: f64, detail: String },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("no root found: {0}")]
    NoRoot(String),

    #[error("fit did not converge after {0} iterations")]
    NonConvergence(usize),

    #[error("parameter estimates diverge (separation): {0}")]
    Separation(String),

    #[error("model is not identifiable from the data: {0}")]
    Unidentifiable(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("line {line}: {message}")]
    Row { line: usize, message: String },

    #[error("optimizer failure: {0}")]
    Optimizer(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        if let Error::Stage { source, .. } = self {
            return source.is_numerical();
        }
        matches!(
            self,
            Error::DegenerateDose { .. }
                | Error::Singular(_)
                | Error::NoRoot(_)
                | Error::NonConvergence(_)
                | Error::Separation(_)
                | Error::Unidentifiable(_)
                | Error::Optimizer(_)
        )
    }

    /// Attributes the error to a named pipeline stage.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
