use thiserror::Error;

/// Errors raised by the estimator, the simulation harness and the analysis tools.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("point is behind the camera (depth {depth:.3e} m)")]
    BehindCamera { depth: f64 },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("degenerate alignment: {0}")]
    DegenerateAlignment(String),
    #[error("internal consistency check failed in block `{block}`: {detail}")]
    InternalConsistency { block: String, detail: String },
    #[error("integration step failed: {0}")]
    IntegrationStep(String),
    #[error("stream gap of {gap:.3} s on {stream} at t = {t:.3}")]
    StreamGap {
        stream: &'static str,
        gap: f64,
        t: f64,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("scenario parse error: {0}")]
    Scenario(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
