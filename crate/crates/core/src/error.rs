use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular matrix (pivot {pivot:e} below threshold {threshold:e})")]
    Singular { pivot: f64, threshold: f64 },

    #[error("Jacobi eigensolver did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    /// A user callback produced a non-finite value.
    #[error("non-finite {quantity} at t = {t}, point = {point:?}")]
    Evaluation {
        quantity: &'static str,
        t: f64,
        point: Vec<f64>,
    },

    #[error("integrator exceeded the step budget of {max_steps} steps at t = {t}")]
    StepBudget { max_steps: usize, t: f64 },

    #[error("step size {dt:e} fell below dt_min at t = {t} with a failing error estimate")]
    StepTooSmall { t: f64, dt: f64 },

    #[error("time {t} is outside the solution span [{lo}, {hi}]")]
    Domain { t: f64, lo: f64, hi: f64 },

    #[error("square-root factor P became singular at t = {t}")]
    SqrtBreakdown { t: f64 },

    #[error("Q_uu is not invertible at t = {t}; regularization was violated")]
    RegularizationViolated { t: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("initial rollout failed: {0}")]
    InitialRollout(Box<Error>),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
