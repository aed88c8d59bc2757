//! Fully discrete semi-Lagrangian / finite element solver for
//! infinite-horizon discounted optimal control with monotone
//! (non-decreasing) controls in `[0, 1]`.
//!
//! The discrete value function is the fixed point of
//!
//! ```text
//! (A w)(x^i, a) = min_{b in I_h(a)} (1 - lambda h) w(x^i + h g(x^i, a), b) + h f(x^i, a)
//! ```
//!
//! over piecewise-linear functions on a simplicial mesh, one field per
//! control level `a in I_h = {0, h, ..., 1}`.
//!
//! Modules, bottom-up:
//! - [`problem`]: problem data and analytic constants
//! - [`mesh`]: uniform triangulation, point location, mesh hypotheses
//! - [`fespace`]: control grid and nodal grid functions
//! - [`bellman`]: the discrete operators and greedy policies
//! - [`solver`]: Picard, Howard and finite-horizon solvers
//! - [`policy`]: closed-loop simulation
//! - [`harness`]: error envelopes, sweeps, rate fits, exhaustive oracle

pub mod bellman;
pub mod error;
pub mod fespace;
pub mod harness;
pub mod io;
pub mod mesh;
pub mod policy;
pub mod problem;
pub mod solver;

pub use bellman::{BellmanOperator, ImageMode, PolicyField};
pub use error::{Error, Result};
pub use fespace::{control_grid, ControlGrid, GridFunction};
pub use mesh::{build_uniform, check_hypotheses, BarycentricCoords, MeshReport, Triangulation};
pub use problem::{
    builtin, holder_exponent, BoxDomain, BuiltinProblemId, ProblemConstants, ProblemSpec,
};
pub use solver::{
    solve, solve_finite_horizon, solve_howard, solve_picard, Method, Solution, SolveOptions,
    SolveReport, StopRule,
};
