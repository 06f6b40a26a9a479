use thiserror::Error;

use crate::curves::SampledCurve;
use crate::state_space::Point;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("point does not belong to this space: {0}")]
    SpaceMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid metric: {0}")]
    InvalidMetric(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("limit did not stabilize after {steps} steps (last {last}, previous {previous})")]
    NotConverged {
        last: f64,
        previous: f64,
        steps: usize,
    },

    #[error("no bracket for the induced metric after {doublings} doublings (last s = {last_s})")]
    Unbracketed { last_s: f64, doublings: usize },

    #[error("curve node at t = {0} cannot be resolved (no sample and no evaluator)")]
    NodeUnresolvable(f64),

    #[error("density diagnostic failed: {failed} of {total} grid points did not converge")]
    DensityDiagnostic { failed: usize, total: usize },

    #[error("optimizer failure: {0}")]
    Optimizer(String),

    #[error("no approximate midpoint found: best excess {excess} over slack")]
    MidpointNotFound { best: Point, excess: f64 },

    #[error("geodesic construction aborted at level {level}: {reason}")]
    GeodesicAborted {
        level: usize,
        partial: Box<SampledCurve>,
        reason: Box<Error>,
    },

    #[error("energy appears unbounded below (objective {value})")]
    EnergyUnbounded { value: f64 },

    #[error("minimizing movement step {step} failed: {source}")]
    MmStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
