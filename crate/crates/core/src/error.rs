use thiserror::Error;

/// Errors raised by the measure, rearrangement, functional, flow and
/// Hessian layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("measure space must have at least one cell")]
    EmptySpace,

    #[error("cell {index} has non-positive or non-finite mass {mass}")]
    InvalidMass { index: usize, mass: f64 },

    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("cell index {index} out of range for a space with {cells} cells")]
    IndexOutOfRange { index: usize, cells: usize },

    #[error("functions live on different measure spaces")]
    SpaceMismatch,

    #[error("operation requires an equal-mass space")]
    NotEqualMass,

    #[error("masses are not exact rationals; cannot split into equal cells")]
    IrrationalMasses,

    #[error("splitting needs {needed} cells, limit is {limit}")]
    TooManyCells { needed: u64, limit: usize },

    #[error("values are not injective: cells {first} and {second} share value {value}")]
    NotInjective { first: usize, second: usize, value: f64 },

    #[error("functions are not equidistributed")]
    NotEquidistributed,

    #[error("functions are not similarly ordered (cells {first} and {second})")]
    NotSimilarlyOrdered { first: usize, second: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("support family is empty")]
    EmptyFamily,

    #[error("every function in the family is constant")]
    ConstantFamily,

    #[error("no lower-bound branch applies: {0}")]
    NoBranch(String),

    #[error("level c = {c} must exceed p(0) = {p0}")]
    LevelTooLow { c: f64, p0: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("grid too coarse: axis {axis} has {points} points (need at least {min})")]
    GridTooCoarse { axis: usize, points: usize, min: usize },

    #[error("matrix is singular")]
    SingularMatrix,

    #[error("exact linear flow requires a quadratic Hamiltonian")]
    NotQuadratic,

    #[error("field is nonzero near the box boundary (|value| = {magnitude}); zero extension is invalid")]
    BoundarySupport { magnitude: f64 },

    #[error("kernel support margin violated: field is nonzero within {margin} of the boundary")]
    SupportMargin { margin: f64 },

    #[error("Newton refinement did not converge near {location:?}")]
    NewtonFailed { location: Vec<f64> },

    #[error("critical points at {first:?} and {second:?} are closer than {min_cells} grid cells")]
    ClusteredCriticalPoints { first: Vec<f64>, second: Vec<f64>, min_cells: f64 },

    #[error("coefficients must sum to zero (sum = {sum})")]
    NonzeroTrace { sum: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
