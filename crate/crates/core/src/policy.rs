//! Closed-loop simulation of the discrete dynamics under the greedy
//! feedback derived from a solved value function.

use std::io::Write;

use crate::error::{Error, Result};
use crate::fespace::{ControlGrid, GridFunction};
use crate::io::{coordinate_header, format_float, join_floats};
use crate::mesh::Triangulation;
use crate::problem::ProblemSpec;

/// A simulated path `y_0..y_n` with the control indices `a_0..a_{n-1}` in
/// force on each step.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<usize>,
    /// Control chosen for the step after the last one simulated (`a_n`).
    pub final_control: usize,
    /// `h f(y_j, a_j)`.
    pub stage_costs: Vec<f64>,
    /// `sum_j (1 - lambda h)^j h f(y_j, a_j)`.
    pub discounted_total: f64,
    pub discount_factor: f64,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn controls_nondecreasing(&self) -> bool {
        self.controls
            .iter()
            .chain(std::iter::once(&self.final_control))
            .collect::<Vec<_>>()
            .windows(2)
            .all(|w| w[0] <= w[1])
    }

    /// Writes `step,x1,..,xd,a,stage_cost,discounted_cumulative`. The last row
    /// holds the final state with `a_n` and an empty stage cost.
    pub fn write_csv<W: Write>(&self, grid: &ControlGrid, mut out: W) -> Result<()> {
        let dim = self.states.first().map_or(0, |s| s.len());
        writeln!(
            out,
            "step,{},a,stage_cost,discounted_cumulative",
            coordinate_header(dim)
        )?;
        let mut cumulative = 0.0;
        let mut factor = 1.0;
        for (j, state) in self.states.iter().enumerate() {
            let coords = join_floats(state, ",");
            if j < self.controls.len() {
                cumulative += factor * self.stage_costs[j];
                factor *= self.discount_factor;
                writeln!(
                    out,
                    "{j},{coords},{},{},{}",
                    format_float(grid.level(self.controls[j])),
                    format_float(self.stage_costs[j]),
                    format_float(cumulative)
                )?;
            } else {
                writeln!(
                    out,
                    "{j},{coords},{},,{}",
                    format_float(grid.level(self.final_control)),
                    format_float(cumulative)
                )?;
            }
        }
        Ok(())
    }
}

/// Simulates `steps` steps of `y_{j+1} = y_j + h g(y_j, a_j)` starting from
/// `(x0, a0_index)`. At each step the next control is the admissible `b`
/// minimising `(1 - lambda h) value(y_{j+1}, b) + h f(y_j, a_j)`, ties going
/// to the smallest `b`.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    spec: &ProblemSpec,
    tri: &Triangulation,
    grid: &ControlGrid,
    value: &GridFunction,
    x0: &[f64],
    a0_index: usize,
    h: f64,
    steps: usize,
) -> Result<Trajectory> {
    value.check_shape(tri, grid)?;
    if a0_index > grid.top() {
        return Err(Error::Config(format!(
            "initial control index {a0_index} is not on the grid"
        )));
    }
    if !(h > 0.0 && h * spec.discount() < 1.0) {
        return Err(Error::Config(format!(
            "time step must satisfy 0 < h < 1/lambda, got {h}"
        )));
    }
    let located = |p: &[f64], step: usize| {
        tri.locate(p).map_err(|e| match e {
            Error::OutOfDomain {
                axis, coordinate, ..
            } => Error::TrajectoryExit {
                step,
                axis,
                coordinate,
            },
            other => other,
        })
    };
    located(x0, 0)?;

    let beta = 1.0 - spec.discount() * h;
    let mut y = x0.to_vec();
    let mut a = a0_index;
    let mut traj = Trajectory {
        states: vec![y.clone()],
        controls: Vec::with_capacity(steps),
        final_control: a0_index,
        stage_costs: Vec::with_capacity(steps),
        discounted_total: 0.0,
        discount_factor: beta,
    };
    let mut factor = 1.0;
    for j in 0..steps {
        let level = grid.level(a);
        let g = spec.dynamics(&y, level);
        let next: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| yi + h * gi).collect();
        let bc = located(&next, j + 1)?;
        let mut best_b = a;
        let mut best = value.evaluate_at(&bc, a);
        for b in a + 1..=grid.top() {
            let c = value.evaluate_at(&bc, b);
            if c < best {
                best = c;
                best_b = b;
            }
        }
        let stage = h * spec.cost(&y, level);
        traj.controls.push(a);
        traj.stage_costs.push(stage);
        traj.discounted_total += factor * stage;
        factor *= beta;
        traj.states.push(next.clone());
        y = next;
        a = best_b;
    }
    traj.final_control = a;
    Ok(traj)
}

/// Residual of the telescoped dynamic-programming identity along a
/// trajectory: `|total + beta^n value(y_n, a_n) - value(y_0, a_0)|`.
pub fn cost_consistency(
    value: &GridFunction,
    tri: &Triangulation,
    trajectory: &Trajectory,
) -> Result<f64> {
    let n = trajectory.steps();
    let start_control = trajectory
        .controls
        .first()
        .copied()
        .unwrap_or(trajectory.final_control);
    let start = value.evaluate(tri, &trajectory.states[0], start_control)?;
    let end = value.evaluate(tri, &trajectory.states[n], trajectory.final_control)?;
    let tail = trajectory.discount_factor.powi(n as i32) * end;
    Ok((trajectory.discounted_total + tail - start).abs())
}
