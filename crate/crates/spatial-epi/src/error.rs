//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid infectivity law: {0}")]
    InvalidLaw(String),

    #[error(
        "Monte Carlo estimation budget exceeded: standard error {achieved_se:.3e} > \
         target {target_se:.3e} after {samples} samples"
    )]
    EstimationBudgetExceeded {
        target_se: f64,
        achieved_se: f64,
        samples: usize,
    },

    #[error("Monte Carlo estimation grid required for this law (no closed form)")]
    EstimationGridRequired,

    #[error("discrete kernel bound violated: declared C_beta {declared}, observed {observed}")]
    KernelBoundViolation { declared: f64, observed: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("infeasible initial condition: {0}")]
    InfeasibleInitialCondition(String),

    #[error("conditional path sampling failed after {attempts} rejection attempts (age {age})")]
    PathConditioning { attempts: usize, age: f64 },

    #[error(
        "thinning envelope violated at location {location}, t = {time}: acceptance ratio {ratio}"
    )]
    EnvelopeViolation {
        location: usize,
        time: f64,
        ratio: f64,
    },

    #[error("time {t} outside simulated horizon {horizon}")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("per-step fixed point is not a contraction ({0})")]
    ContractionFailure(String),

    #[error("{field} went negative ({value:.3e} at t = {t})")]
    NegativeField {
        field: &'static str,
        value: f64,
        t: f64,
    },

    #[error("constraint violated: {what} (deviation {deviation:.3e})")]
    ConstraintViolation { what: String, deviation: f64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
