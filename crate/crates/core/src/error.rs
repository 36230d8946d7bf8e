use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("sampling grid produced no particles (grid missed the support)")]
    EmptySample,

    #[error("step size reached dt_min = {dt_min:e} at t = {t} without meeting tolerance")]
    StepUnderflow { t: f64, dt_min: f64 },

    #[error("planner failed at epsilon = {epsilon:e}: {reason}")]
    Plan { epsilon: f64, reason: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
