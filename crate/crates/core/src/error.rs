use thiserror::Error;

/// Errors raised while building or running the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("background box must be a square, got {width} x {height}")]
    NonSquareBox { width: f64, height: f64 },

    #[error("polynomial degree {0} is not supported (expected 1..=3)")]
    UnsupportedDegree(usize),

    #[error("derivative order {order} exceeds polynomial degree {degree}")]
    DerivativeOrder { order: usize, degree: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("structural error: {0}")]
    Structural(String),

    #[error("cut quadrature exceeded the maximal bisection depth {0}")]
    QuadratureDepth(usize),

    #[error("dense assembly refused: {n} unknowns exceed the guard of {limit}")]
    SizeGuard { n: usize, limit: usize },

    #[error("nonpositive diagonal entry {value} at row {row}")]
    NonPositiveDiagonal { row: usize, value: f64 },

    #[error(
        "fractional iteration count undefined: final residual {r_final} is not below initial {r_0}"
    )]
    FractionalUndefined { r_final: f64, r_0: f64 },

    #[error("Arnoldi breakdown at step {step} with relative residual {residual}")]
    Breakdown { step: usize, residual: f64 },

    #[error("coarse solve failed: {0}")]
    CoarseSolve(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
