use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },

    #[error("quote optimisation did not converge for z={z} oz, p={p} bp")]
    NonConvergence { z: f64, p: f64 },

    #[error("quadratic Hamiltonian fit is not convex (a2={a2})")]
    NonConvexFit { a2: f64 },

    #[error("Riccati integration blew up at t={t} day")]
    BlowUp { t: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("market data ingestion error: {0}")]
    Ingest(String),

    #[error("calibration failed after {iterations} iterations: {detail}")]
    Calibration { iterations: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            field,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerical kernels, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::NonConvexFit { .. }
                | Error::BlowUp { .. }
                | Error::Calibration { .. }
        )
    }
}
