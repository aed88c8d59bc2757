//! Piecewise-linear functions on the triangulation, one field per discrete
//! control level.

use std::io::Write;
use std::ops::RangeInclusive;

use crate::error::{Error, Result};
use crate::io::{coordinate_header, format_float, join_floats};
use crate::mesh::{BarycentricCoords, Triangulation};

const INTEGER_TOL: f64 = 1e-9;

/// Equispaced control levels `{0, h, 2h, ..., 1}` with `1/h` an integer.
///
/// Levels are addressed by index; the float value is derived on demand as
/// `i / m` so membership in an admissible set never drifts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ControlGrid {
    m: usize,
}

pub fn control_grid(h: f64) -> Result<ControlGrid> {
    ControlGrid::new(h)
}

impl ControlGrid {
    pub fn new(h: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0 && h <= 1.0) {
            return Err(Error::Config(format!(
                "control step h must lie in (0, 1], got {h}"
            )));
        }
        let inv = 1.0 / h;
        let m = inv.round();
        if (inv - m).abs() > INTEGER_TOL {
            return Err(Error::Config(format!(
                "1/h must be an integer, got 1/{h} = {inv}"
            )));
        }
        Ok(Self { m: m as usize })
    }

    /// Grid with `m` intervals.
    pub fn with_intervals(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config(
                "control grid needs at least one interval".into(),
            ));
        }
        Ok(Self { m })
    }

    /// Number of intervals `m = 1/h`.
    pub fn intervals(&self) -> usize {
        self.m
    }

    pub fn num_levels(&self) -> usize {
        self.m + 1
    }

    pub fn step(&self) -> f64 {
        1.0 / self.m as f64
    }

    pub fn top(&self) -> usize {
        self.m
    }

    pub fn level(&self, i: usize) -> f64 {
        i as f64 / self.m as f64
    }

    pub fn levels(&self) -> Vec<f64> {
        (0..=self.m).map(|i| self.level(i)).collect()
    }

    /// Index of a control value lying on the grid.
    pub fn index_of(&self, a: f64) -> Result<usize> {
        let s = a * self.m as f64;
        let i = s.round();
        if !(0.0..=self.m as f64).contains(&i) || (s - i).abs() > INTEGER_TOL {
            return Err(Error::Config(format!(
                "control {a} is not a level of the grid with step {}",
                self.step()
            )));
        }
        Ok(i as usize)
    }

    /// Indices of the admissible next controls `b >= a`.
    pub fn admissible(&self, a_index: usize) -> RangeInclusive<usize> {
        a_index..=self.m
    }
}

pub fn admissible(grid: &ControlGrid, a_index: usize) -> RangeInclusive<usize> {
    grid.admissible(a_index)
}

/// Nodal values of an element of the finite element space, stored
/// node-major: `values[node * levels + level]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    nodes: usize,
    levels: usize,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(nodes: usize, levels: usize) -> Self {
        Self::constant(nodes, levels, 0.0)
    }

    pub fn constant(nodes: usize, levels: usize, c: f64) -> Self {
        Self {
            nodes,
            levels,
            values: vec![c; nodes * levels],
        }
    }

    pub fn zeros_on(tri: &Triangulation, grid: &ControlGrid) -> Self {
        Self::zeros(tri.num_vertices(), grid.num_levels())
    }

    /// Interpolant of `f(x, a)` at every vertex and level.
    pub fn from_fn(
        tri: &Triangulation,
        grid: &ControlGrid,
        f: impl Fn(&[f64], f64) -> f64,
    ) -> Self {
        let levels = grid.num_levels();
        let mut values = Vec::with_capacity(tri.num_vertices() * levels);
        for x in tri.vertices() {
            for l in 0..levels {
                values.push(f(x, grid.level(l)));
            }
        }
        Self {
            nodes: tri.num_vertices(),
            levels,
            values,
        }
    }

    pub fn from_values(nodes: usize, levels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != nodes * levels {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values", nodes * levels),
                found: format!("{}", values.len()),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "grid function values must be finite, got {bad}"
            )));
        }
        Ok(Self {
            nodes,
            levels,
            values,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes
    }

    pub fn num_levels(&self) -> usize {
        self.levels
    }

    pub fn get(&self, node: usize, level: usize) -> f64 {
        self.values[node * self.levels + level]
    }

    pub fn set(&mut self, node: usize, level: usize, v: f64) {
        self.values[node * self.levels + level] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Values of one node across all levels.
    pub fn node_values(&self, node: usize) -> &[f64] {
        &self.values[node * self.levels..(node + 1) * self.levels]
    }

    pub fn check_shape(&self, tri: &Triangulation, grid: &ControlGrid) -> Result<()> {
        if self.nodes != tri.num_vertices() || self.levels != grid.num_levels() {
            return Err(Error::DimensionMismatch {
                expected: format!(
                    "{} nodes x {} levels",
                    tri.num_vertices(),
                    grid.num_levels()
                ),
                found: format!("{} nodes x {} levels", self.nodes, self.levels),
            });
        }
        Ok(())
    }

    /// `max |w(x^i, a^j)|`.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sup_norm_diff(&self, other: &GridFunction) -> Result<f64> {
        if self.nodes != other.nodes || self.levels != other.levels {
            return Err(Error::DimensionMismatch {
                expected: format!("{} nodes x {} levels", self.nodes, self.levels),
                found: format!("{} nodes x {} levels", other.nodes, other.levels),
            });
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Interpolated value at a located point.
    pub fn evaluate_at(&self, bc: &BarycentricCoords, level: usize) -> f64 {
        bc.vertices
            .iter()
            .zip(&bc.weights)
            .map(|(v, w)| w * self.get(*v, level))
            .sum()
    }

    pub fn evaluate(&self, tri: &Triangulation, p: &[f64], level: usize) -> Result<f64> {
        Ok(self.evaluate_at(&tri.locate(p)?, level))
    }

    /// Writes `node,x1,..,xd,a,value`, one row per node and level.
    pub fn write_csv<W: Write>(
        &self,
        tri: &Triangulation,
        grid: &ControlGrid,
        mut out: W,
    ) -> Result<()> {
        self.check_shape(tri, grid)?;
        writeln!(out, "node,{},a,value", coordinate_header(tri.dim()))?;
        for (node, x) in tri.vertices().enumerate() {
            let coords = join_floats(x, ",");
            for level in 0..self.levels {
                writeln!(
                    out,
                    "{node},{coords},{},{}",
                    format_float(grid.level(level)),
                    format_float(self.get(node, level))
                )?;
            }
        }
        Ok(())
    }
}

/// Free-function form of [`GridFunction::evaluate`].
pub fn evaluate(gf: &GridFunction, tri: &Triangulation, p: &[f64], level: usize) -> Result<f64> {
    gf.evaluate(tri, p, level)
}

pub fn sup_norm_diff(a: &GridFunction, b: &GridFunction) -> Result<f64> {
    a.sup_norm_diff(b)
}
