use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown built-in nonlinearity `{0}`")]
    UnknownSpec(String),

    #[error("parameter mu = {0} lies outside the bistability interval (0, 1]")]
    MuOutOfRange(f64),

    #[error("not bistable at mu = {mu}: found {found} positive root(s)")]
    NotBistable { mu: f64, found: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("Newton iteration did not converge after {iters} iterations (residual {residual:e})")]
    NoConvergence { iters: usize, residual: f64 },

    #[error("equilibrated Jacobian is singular")]
    SingularJacobian,

    #[error("degenerate denominator lambda + r*lambda_r at core node {0}")]
    DegenerateDenominator(usize),

    #[error("lambda(0, mu) vanishes; far-field decay rate undefined")]
    DegenerateFarField,

    #[error("{0} out of domain")]
    OutOfDomain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("|rho| = {0:e} too small to define a rotation period")]
    PeriodUndefined(f64),

    #[error("seed is not a converged solution (residual {0:e})")]
    SeedNotConverged(f64),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
