use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("bodies {i} and {j} collide (separation {separation:e}{})", fmt_time(*.t))]
    Collision {
        i: usize,
        j: usize,
        separation: f64,
        t: Option<f64>,
    },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid mass system: {0}")]
    InvalidSystem(String),

    #[error("degenerate system: {0}")]
    DegenerateSystem(String),

    #[error(
        "cluster chaining joined bodies {i} and {j} at distance {distance:e} (> 10 x tol_cluster)"
    )]
    ChainingAmbiguity { i: usize, j: usize, distance: f64 },

    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("not converged: {0}")]
    NotConverged(String),

    #[error("initial configuration has a collision between bodies {i} and {j}")]
    CollisionAtStart { i: usize, j: usize },

    #[error("ODE integrator failed at t = {t}: {reason}")]
    IntegratorFailure { t: f64, reason: String },

    #[error("Kepler iteration did not converge: {0}")]
    ConvergenceFailure(String),

    #[error("finite-difference gradient unstable under step halving (relative change {change:.3e})")]
    UnstableGradient { change: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

fn fmt_time(t: Option<f64>) -> String {
    match t {
        Some(t) => format!(" at t = {t}"),
        None => String::new(),
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
