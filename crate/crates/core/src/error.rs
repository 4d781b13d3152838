use thiserror::Error;

use crate::dynamics::StateVector;
use crate::frames::Epoch;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular geometry: {0}")]
    Singularity(String),

    #[error("osculating true anomaly undefined for a rectilinear state")]
    UndefinedAnomaly,

    #[error("propagation failed at t = {} s: {reason}", epoch.seconds())]
    PropagationFailure {
        epoch: Epoch,
        last_state: Box<StateVector>,
        reason: String,
    },

    #[error("halo family generation failed: {reason}")]
    Generation { reason: String },

    #[error("baseline refinement diverged (worst joint defect {worst_position_km:.3e} km, {worst_velocity_kms:.3e} km/s)")]
    Refinement {
        worst_position_km: f64,
        worst_velocity_kms: f64,
    },

    #[error("epoch {} s outside baseline span [{}, {}]", t.seconds(), start.seconds(), end.seconds())]
    OutOfRange { t: Epoch, start: Epoch, end: Epoch },

    #[error("filter divergence: {0}")]
    FilterDivergence(String),

    #[error("planning horizon: {0}")]
    Horizon(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
