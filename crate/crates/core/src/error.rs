//! Error type shared by every module of the crate.

use crate::solver::Solution;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Unknown builtin problem name.
    #[error("unknown problem '{0}' (known: {known})", known = crate::problem::BuiltinProblemId::known_names())]
    UnknownProblem(String),

    /// Invalid parameters (discount, step sizes, options, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// The requested triangulation cannot be built.
    #[error("mesh construction error: {0}")]
    Mesh(String),

    /// A point lies outside the polyhedral domain beyond the snap tolerance.
    #[error("point outside the discrete domain: coordinate {axis} = {coordinate} not in [{lower}, {upper}]")]
    OutOfDomain {
        axis: usize,
        coordinate: f64,
        lower: f64,
        upper: f64,
    },

    /// The image `x^i + h g(x^i, a)` of a mesh node leaves the discrete domain.
    #[error("image of node {node} under control level {level} leaves the discrete domain: coordinate {axis} = {coordinate}")]
    ImageOutOfDomain {
        node: usize,
        level: usize,
        axis: usize,
        coordinate: f64,
    },

    /// A simulated trajectory leaves the discrete domain.
    #[error(
        "trajectory leaves the discrete domain at step {step}: coordinate {axis} = {coordinate}"
    )]
    TrajectoryExit {
        step: usize,
        axis: usize,
        coordinate: f64,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    /// The iteration limit was reached; the partial result is kept.
    #[error("no convergence after {} iterations (last residual {:e})", .0.report.iterations, .0.report.last_residual())]
    NotConverged(Box<Solution>),

    /// Exhaustive enumeration refused because the instance is too large.
    #[error("enumeration budget exceeded: {what} = {count} > {limit}")]
    BudgetExceeded {
        what: &'static str,
        count: u128,
        limit: u128,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
