use thiserror::Error;

/// Errors produced by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid inertia: {0}")]
    InvalidInertia(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Euler-angle rates are singular at sin(beta) = {sin_beta:e}; use the quaternion path")]
    CoordinateSingularity { sin_beta: f64 },

    #[error("effective moment of inertia undefined for a spherical rotor (I = I3)")]
    UndefinedEffectiveInertia,

    #[error("integration failed at t = {t:e} s: {reason}")]
    IntegrationFailure { t: f64, reason: String },

    #[error("spin norm drifted by {drift:e} at t = {t:e} s (tolerance 1e-6)")]
    NormDrift { t: f64, drift: f64 },

    #[error("ensemble sample {index} failed: {source}")]
    EnsembleSample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported spin configuration: {0}")]
    UnsupportedSpinConfig(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
