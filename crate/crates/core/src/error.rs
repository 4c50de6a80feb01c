use thiserror::Error;

/// Errors raised by the geometry, discretization and solver layers.
///
/// Solver non-convergence is not an error: it is reported through
/// [`crate::optim::SolveStatus`] on an otherwise valid result.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("nearest-point projection is ambiguous at {point:?}")]
    AmbiguousProjection { point: [f64; 3] },

    #[error("point {point:?} is not on the manifold (residual {residual:e})")]
    NotOnManifold { point: [f64; 3], residual: f64 },

    #[error("incompatible boundary condition: {0}")]
    IncompatibleBc(String),

    #[error("gradient scale must be positive in every direction, got {0:?}")]
    ScaleMismatch([f64; 3]),

    #[error("density is not differentiable at a quadrature point (p < 2 with zero regularization)")]
    NonSmoothPoint,

    #[error("incompatible cell problem: {0}")]
    IncompatibleProblem(String),

    #[error("lateral boundary datum violated (max deviation {0:e})")]
    BcViolation(f64),

    #[error("{count} evaluation point(s) outside the density table range")]
    OutOfTableRange { count: usize },

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
