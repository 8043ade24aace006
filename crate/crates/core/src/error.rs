use thiserror::Error;

pub type Result<T, E = MarketError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("divergence: non-finite iterate{}", round.map(|r| format!(" at round {r}")).unwrap_or_default())]
    Divergence { round: Option<usize> },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is not positive definite (lambda_min = {lambda_min:e}, lambda_max = {lambda_max:e})")]
    Singular { lambda_min: f64, lambda_max: f64 },

    #[error("merged parameters coincide with the true parameters; error-ratio gain is unbounded")]
    PerfectMerge,

    #[error("architecture mismatch: {0}")]
    Architecture(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl MarketError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        MarketError::Domain(msg.into())
    }

    /// Attaches a round index to a divergence error; other variants pass through.
    pub fn at_round(self, round: usize) -> Self {
        match self {
            MarketError::Divergence { .. } => MarketError::Divergence { round: Some(round) },
            other => other,
        }
    }
}

impl From<std::io::Error> for MarketError {
    fn from(e: std::io::Error) -> Self {
        MarketError::Io(e.to_string())
    }
}
