use thiserror::Error;

/// Errors raised by the simulation, estimation and optimization routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("unstable system: {0}")]
    Instability(String),
    #[error("outside domain: {0}")]
    Domain(String),
    #[error("estimation failed: {0}")]
    Estimation(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("optimization failed at eta = {eta}: {reason}")]
    Optimization { eta: f64, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
