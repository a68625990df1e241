use thiserror::Error;

/// Errors raised by the modeling, sampling and scoring routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("matrix is not positive definite ({context}); diagonal range [{min_diag:e}, {max_diag:e}], condition estimate {condition:e}")]
    NotPositiveDefinite {
        context: &'static str,
        min_diag: f64,
        max_diag: f64,
        condition: f64,
    },
    #[error("forward filter underflow at t = {t}: both filtered probabilities are zero")]
    FilterUnderflow { t: usize },
    #[error("Polya-Gamma sampler exceeded {0} proposals")]
    SamplerExhausted(usize),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sweep {sweep}: {source}")]
    Sweep {
        sweep: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn at_sweep(self, sweep: usize) -> Self {
        Error::Sweep {
            sweep,
            source: Box::new(self),
        }
    }

    /// True for errors caused by malformed input rather than a numerical fault.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Dimension { .. } | Error::InvalidData(_) | Error::Config(_) | Error::Domain(_) => {
                true
            }
            Error::Sweep { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
