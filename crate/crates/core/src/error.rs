use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("grid {g1}x{g2} cannot resolve a field with M={m}, N={n} (need at least {need1}x{need2})")]
    Resolution {
        g1: usize,
        g2: usize,
        m: usize,
        n: usize,
        need1: usize,
        need2: usize,
    },

    #[error("grid field is not even-symmetric: max |g(x) - g(-x)| = {max_asymmetry:e} exceeds {tolerance:e}")]
    SymmetryViolation { max_asymmetry: f64, tolerance: f64 },

    #[error("root solver failed: {0}")]
    SolverFailure(String),

    #[error("matrix oracle failed: {0}")]
    OracleFailure(String),

    #[error("singular backward recursion at n={n}: |denominator| = {denominator:e}")]
    SingularRecursion { n: usize, denominator: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular Jacobian in linear solve at kappa={kappa}")]
    SingularJacobian { kappa: f64 },

    #[error("branch terminated: {0}")]
    BranchTerminated(String),

    #[error("quadrature tail bound {tail:e} exceeds tolerance {tolerance:e}; use s_max >= {suggested_s_max}")]
    Horizon {
        tail: f64,
        tolerance: f64,
        suggested_s_max: f64,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
