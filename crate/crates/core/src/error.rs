use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    /// Doubling the node count moved the quadrature value by more than the
    /// requested absolute tolerance.
    #[error("quadrature did not converge: |delta| = {delta:.3e} exceeds abs_tol = {abs_tol:.3e}")]
    QuadratureNonConvergence { delta: f64, abs_tol: f64 },

    #[error("optimizer stopped after {iterations} iterations with score sup-norm {grad_norm:.3e} above tolerance")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("observed information is not positive definite at the reported optimum")]
    SingularInformation,

    #[error("covariance submatrix of the restriction is singular")]
    SingularCovariance,

    #[error("all observations are selected (u_i = 1 for every i); the selection equation is unidentified")]
    MissingCensoring,

    #[error("no selected observations (u_i = 0 for every i); the outcome equation has no data")]
    NoSelectedObservations,

    #[error("model is not identified: {dim} parameters for {n} observations")]
    InsufficientData { dim: usize, n: usize },

    #[error("operation requires a converged fit")]
    NotConverged,

    #[error("models are not nested: full log-likelihood {full} is below restricted {restricted}")]
    NotNested { full: f64, restricted: f64 },

    #[error("invalid scenario id {0}: expected 1..=6")]
    InvalidScenario(u8),

    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
