use thiserror::Error;

/// Failures surfaced by the simulator. Numerical breakdowns carry enough
/// context to diagnose the regime rather than being clipped or hidden.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error(
        "fBm generation failed: circulant embedding min eigenvalue {min_eigenvalue:.3e}, \
         Cholesky fallback failed (condition estimate {condition:.3e})"
    )]
    Generation { min_eigenvalue: f64, condition: f64 },

    #[error(
        "sewing did not converge on [{s}, {t}]: last level difference {last_diff:.3e} exceeds 100 x tol = {tol:.1e}"
    )]
    Sewing {
        s: usize,
        t: usize,
        tol: f64,
        last_diff: f64,
        history: Vec<f64>,
    },

    #[error("exponential overflow on Brownian path {path}: exponent {exponent:.6e} ({diagnostics})")]
    Overflow {
        path: usize,
        exponent: f64,
        diagnostics: String,
    },

    #[error("non-finite value produced at time step {step}")]
    NonFinite { step: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}

pub(crate) fn shape<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
