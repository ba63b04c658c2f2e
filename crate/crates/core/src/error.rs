use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid physical parameters: {0}")]
    InvalidParams(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),

    #[error("purity {0} outside [1/2, 1]")]
    PurityOutOfRange(f64),

    /// The u <-> v substitution divides by R.
    #[error("control substitution is degenerate at R = 0")]
    DegenerateSubstitution,

    #[error("covector is degenerate (R = q = 0 or p = q = 0)")]
    DegenerateCovector,

    #[error("invalid control schedule: {0}")]
    InvalidSchedule(String),

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("state left the Bloch ball at t = {t} (|r| = {norm})")]
    InvariantViolation { t: f64, norm: f64 },

    /// R vanished strictly inside a smooth segment, so the control needs an
    /// interior impulse that the reconstruction formula does not provide.
    #[error("R(t) vanishes at interior time t = {t}")]
    InteriorZero { t: f64 },

    /// The smooth control is not integrable near an endpoint with R = 0.
    #[error("singular control at t = {t}: {reason}")]
    SingularControl { t: f64, reason: String },

    #[error("no finite transfer time: target purity level |r1| = {mu1} is a pure state while |r0| = {mu0} < 1")]
    NoFiniteTime { mu0: f64, mu1: f64 },

    #[error("target |r1| = {mu1} exceeds the feasibility cap {cap}")]
    InfeasibleTarget { mu1: f64, cap: f64 },

    #[error("validation failed: endpoint error {endpoint_error:e} > tol {tol:e} ({diagnostics})")]
    ValidationFailed {
        endpoint_error: f64,
        tol: f64,
        diagnostics: String,
    },

    #[error("shooting did not converge (best residual {best_residual:e} after {n_evals} extremal integrations)")]
    NotFound { best_residual: f64, n_evals: usize },

    #[error("goal not reached before horizon {horizon} ({explored} nodes explored, farthest |r| = {max_radius})")]
    Unreached {
        horizon: f64,
        explored: usize,
        max_radius: f64,
    },

    #[error("invalid grid specification: {0}")]
    InvalidGrid(String),
}
