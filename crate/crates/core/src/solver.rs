//! Fixed-point solvers for the discrete Bellman equation `u = A u`, and the
//! finite-horizon backward recursion.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::bellman::{check_step, BellmanOperator, ImageMode, PolicyField};
use crate::error::{Error, Result};
use crate::fespace::{ControlGrid, GridFunction};
use crate::mesh::Triangulation;
use crate::problem::ProblemSpec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Method {
    #[default]
    Picard,
    Howard,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Picard => "picard",
            Method::Howard => "howard",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "picard" => Ok(Method::Picard),
            "howard" => Ok(Method::Howard),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (picard | howard)"
            ))),
        }
    }
}

/// When to stop iterating.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum StopRule {
    /// Successive difference `<= h^2`.
    #[default]
    StepSquared,
    /// Guaranteed distance to the fixed point `<= eps`.
    TargetBound(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    pub h: f64,
    pub method: Method,
    pub stop_rule: StopRule,
    pub max_iterations: usize,
    /// Howard policy-evaluation tolerance; defaults to `h^2 / 10`.
    pub eval_tolerance: Option<f64>,
    pub image_mode: ImageMode,
}

impl SolveOptions {
    pub fn new(h: f64) -> Self {
        Self {
            h,
            method: Method::Picard,
            stop_rule: StopRule::StepSquared,
            max_iterations: 100_000,
            eval_tolerance: None,
            image_mode: ImageMode::Strict,
        }
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_stop_rule(mut self, rule: StopRule) -> Self {
        self.stop_rule = rule;
        self
    }

    pub fn with_max_iterations(mut self, n: usize) -> Self {
        self.max_iterations = n;
        self
    }

    pub fn eval_tolerance(&self) -> f64 {
        self.eval_tolerance.unwrap_or(self.h * self.h / 10.0)
    }

    pub fn validate(&self, spec: &ProblemSpec) -> Result<()> {
        if !(self.h > 0.0 && self.h * spec.discount() < 1.0) {
            return Err(Error::Config(format!(
                "time step must satisfy 0 < h < 1/lambda = {}, got {}",
                1.0 / spec.discount(),
                self.h
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be >= 1".into()));
        }
        if let StopRule::TargetBound(eps) = self.stop_rule {
            if !(eps.is_finite() && eps > 0.0) {
                return Err(Error::Config(format!(
                    "target bound must be > 0, got {eps}"
                )));
            }
        }
        let tol = self.eval_tolerance();
        if !(tol.is_finite() && tol > 0.0) {
            return Err(Error::Config(format!(
                "eval_tolerance must be > 0, got {tol}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub method: Method,
    pub iterations: usize,
    /// `|u_n - u_{n-1}|` for Picard; `|A w - w|` after each policy
    /// improvement for Howard.
    pub residual_history: Vec<f64>,
    /// Upper bound on the sup-norm distance of the returned iterate to the
    /// exact discrete fixed point.
    pub guaranteed_error: f64,
    /// `1 - lambda h`.
    pub contraction: f64,
    /// Total policy-evaluation sweeps (Howard only).
    pub evaluation_sweeps: usize,
    pub converged: bool,
    pub wall_time: Duration,
}

impl SolveReport {
    pub fn last_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::NAN)
    }
}

/// A solved (or partially solved) value function with its greedy policy.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub value: GridFunction,
    pub policy: PolicyField,
    pub report: SolveReport,
}

/// `(1 - lambda h) / (lambda h)`: the geometric-series factor turning a
/// successive difference into a bound on the distance to the fixed point.
pub fn error_bound_factor(discount: f64, h: f64) -> f64 {
    (1.0 - discount * h) / (discount * h)
}

struct Stopper {
    rule: StopRule,
    h: f64,
    factor: f64,
}

impl Stopper {
    fn new(spec: &ProblemSpec, opts: &SolveOptions) -> Self {
        Self {
            rule: opts.stop_rule,
            h: opts.h,
            factor: error_bound_factor(spec.discount(), opts.h),
        }
    }

    fn done(&self, residual: f64) -> bool {
        match self.rule {
            StopRule::StepSquared => residual <= self.h * self.h,
            StopRule::TargetBound(eps) => residual * self.factor <= eps,
        }
    }

    /// Residual that satisfies the rule.
    fn threshold(&self) -> f64 {
        match self.rule {
            StopRule::StepSquared => self.h * self.h,
            StopRule::TargetBound(eps) => eps / self.factor,
        }
    }
}

fn operator(
    spec: &ProblemSpec,
    tri: &Triangulation,
    grid: &ControlGrid,
    opts: &SolveOptions,
) -> Result<BellmanOperator> {
    opts.validate(spec)?;
    BellmanOperator::new(spec, tri, grid, opts.h, opts.image_mode)
}

/// Dispatches on `opts.method`.
pub fn solve(
    spec: &ProblemSpec,
    tri: &Triangulation,
    grid: &ControlGrid,
    opts: &SolveOptions,
) -> Result<Solution> {
    match opts.method {
        Method::Picard => solve_picard(spec, tri, grid, opts),
        Method::Howard => solve_howard(spec, tri, grid, opts),
    }
}

/// Picard iteration `u_n = A u_{n-1}` from `u_0 = 0`.
pub fn solve_picard(
    spec: &ProblemSpec,
    tri: &Triangulation,
    grid: &ControlGrid,
    opts: &SolveOptions,
) -> Result<Solution> {
    let op = operator(spec, tri, grid, opts)?;
    picard_from(&op, spec, GridFunction::zeros_on(tri, grid), opts)
}

/// Picard iteration from a caller-supplied starting iterate.
pub fn picard_from(
    op: &BellmanOperator,
    spec: &ProblemSpec,
    initial: GridFunction,
    opts: &SolveOptions,
) -> Result<Solution> {
    let start = Instant::now();
    let stopper = Stopper::new(spec, opts);
    let mut u = initial;
    let mut history = Vec::new();
    let mut converged = false;
    while history.len() < opts.max_iterations {
        let (next, _) = op.apply(&u)?;
        let residual = next.sup_norm_diff(&u)?;
        history.push(residual);
        u = next;
        if stopper.done(residual) {
            converged = true;
            break;
        }
    }
    let policy = op.greedy_policy(&u)?;
    let residual = history.last().copied().unwrap_or(f64::INFINITY);
    let report = SolveReport {
        method: Method::Picard,
        iterations: history.len(),
        guaranteed_error: residual * stopper.factor,
        residual_history: history,
        contraction: op.discount_factor(),
        evaluation_sweeps: 0,
        converged,
        wall_time: start.elapsed(),
    };
    finish(u, policy, report)
}

fn finish(value: GridFunction, policy: PolicyField, report: SolveReport) -> Result<Solution> {
    let solution = Solution {
        value,
        policy,
        report,
    };
    if solution.report.converged {
        Ok(solution)
    } else {
        Err(Error::NotConverged(Box::new(solution)))
    }
}

/// Howard policy iteration.
///
/// Each outer iteration evaluates the current policy by iterating the
/// frozen-policy operator until successive changes drop below the
/// evaluation tolerance, then improves the policy greedily. It stops once the
/// policy is stable and the Bellman residual `|A w - w|` meets the stop
/// rule; the returned value is `A w`, so the Picard error bound applies.
pub fn solve_howard(
    spec: &ProblemSpec,
    tri: &Triangulation,
    grid: &ControlGrid,
    opts: &SolveOptions,
) -> Result<Solution> {
    let start = Instant::now();
    let op = operator(spec, tri, grid, opts)?;
    let stopper = Stopper::new(spec, opts);
    let mut eval_tol = opts.eval_tolerance();

    let mut w = GridFunction::zeros_on(tri, grid);
    let mut policy = PolicyField::hold(tri.num_vertices(), grid.num_levels());
    let mut history = Vec::new();
    let mut sweeps = 0usize;

    loop {
        loop {
            let next = op.apply_policy(&w, &policy)?;
            let change = next.sup_norm_diff(&w)?;
            w = next;
            sweeps += 1;
            if change <= eval_tol {
                break;
            }
        }
        let (improved, new_policy) = op.apply(&w)?;
        let residual = improved.sup_norm_diff(&w)?;
        history.push(residual);
        let stable = new_policy == policy;
        let done = stable && stopper.done(residual);
        if done || history.len() >= opts.max_iterations {
            let policy = op.greedy_policy(&improved)?;
            let report = SolveReport {
                method: Method::Howard,
                iterations: history.len(),
                guaranteed_error: residual * stopper.factor,
                residual_history: history,
                contraction: op.discount_factor(),
                evaluation_sweeps: sweeps,
                converged: done,
                wall_time: start.elapsed(),
            };
            return finish(improved, policy, report);
        }
        if stable {
            // The policy is settled but its evaluation is too coarse.
            eval_tol = eval_tol.min(stopper.threshold()) / 10.0;
        }
        policy = new_policy;
        w = improved;
    }
}

/// `A^mu` applied to the zero function: the value at time 0 of the
/// finite-horizon problem with horizon `mu h` and zero terminal cost.
pub fn solve_finite_horizon(
    spec: &ProblemSpec,
    tri: &Triangulation,
    grid: &ControlGrid,
    h: f64,
    mu: usize,
    mode: ImageMode,
) -> Result<GridFunction> {
    check_step(spec, grid, h)?;
    let mut u = GridFunction::zeros_on(tri, grid);
    if mu == 0 {
        return Ok(u);
    }
    let op = BellmanOperator::new(spec, tri, grid, h, mode)?;
    for _ in 0..mu {
        u = op.apply(&u)?.0;
    }
    Ok(u)
}
