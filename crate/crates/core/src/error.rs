use thiserror::Error;

/// Errors surfaced by the planning and tracking pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("speed below singularity guard ({speed:.3e} m/s) at t = {t:.6} s")]
    SingularSpeed { t: f64, speed: f64 },

    #[error("gradient was produced against a stale factorization (build {expected}, got {found})")]
    StaleFactorization { expected: u64, found: u64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("no path found: {0}")]
    NoPath(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("planning failed: {0}")]
    Planning(String),

    #[error("controller failed: {0}")]
    Controller(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
