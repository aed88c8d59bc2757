//! Uniform simplicial triangulation of a box, point location and the
//! triangulation hypotheses the convergence theory relies on.
//!
//! Vertices sit on the grid `lower + k + i k` covering the inner box
//! `[lower + k, upper - k]`. Each grid cell is split into `d!` simplices by
//! the Kuhn (Freudenthal) rule; in two dimensions this is the split of every
//! square along its lower-left to upper-right diagonal.

use std::io::Write;

use crate::error::{Error, Result};
use crate::fespace::ControlGrid;
use crate::io::format_float;
use crate::problem::{BoxDomain, ProblemSpec};

/// Point-location snap tolerance, relative to the grid spacing.
pub const LOCATE_SNAP: f64 = 1e-9;
/// Tolerance on the integrality of `(width - 2k) / k`.
const COMMENSURATE_TOL: f64 = 1e-9;
/// Distance (in cell units) below which a coordinate is moved onto a grid line.
const GRID_LINE_SNAP: f64 = 1e-12;

/// Containing simplex of a point and the point's barycentric weights with
/// respect to that simplex's vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct BarycentricCoords {
    pub simplex: usize,
    pub vertices: Vec<usize>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Triangulation {
    domain: BoxDomain,
    spacing: f64,
    inner: BoxDomain,
    cells_per_axis: Vec<usize>,
    nodes_per_axis: Vec<usize>,
    vertices: Vec<f64>,
    simplices: Vec<usize>,
    permutations: Vec<Vec<usize>>,
}

impl PartialEq for Triangulation {
    fn eq(&self, other: &Self) -> bool {
        self.domain == other.domain
            && self.spacing == other.spacing
            && self.vertices == other.vertices
            && self.simplices == other.simplices
    }
}

/// All permutations of `0..n` in lexicographic order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// Rounds `k` to the nearest spacing that divides the first axis of the box.
pub fn snap_spacing(domain: &BoxDomain, k: f64) -> Result<f64> {
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::Mesh(format!(
            "mesh size must be finite and > 0, got {k}"
        )));
    }
    let width = domain.width(0);
    let parts = (width / k).round().max(1.0);
    Ok(width / parts)
}

/// Builds the uniform triangulation of `domain` with grid spacing `k`.
pub fn build_uniform(domain: &BoxDomain, k: f64) -> Result<Triangulation> {
    Triangulation::uniform(domain, k)
}

impl Triangulation {
    pub fn uniform(domain: &BoxDomain, k: f64) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::Mesh(format!(
                "mesh size must be finite and > 0, got {k}"
            )));
        }
        let dim = domain.dim();
        let mut cells_per_axis = Vec::with_capacity(dim);
        let mut inner_lo = Vec::with_capacity(dim);
        let mut inner_hi = Vec::with_capacity(dim);
        for axis in 0..dim {
            let inner_width = domain.width(axis) - 2.0 * k;
            if inner_width <= 0.0 {
                return Err(Error::Mesh(format!(
                    "k = {k} leaves an empty inner box on axis {axis} (width {})",
                    domain.width(axis)
                )));
            }
            let cells = inner_width / k;
            let rounded = cells.round();
            if (cells - rounded).abs() > COMMENSURATE_TOL || rounded < 1.0 {
                return Err(Error::Mesh(format!(
                    "k = {k} is not commensurate with axis {axis}: (width - 2k)/k = {cells}"
                )));
            }
            cells_per_axis.push(rounded as usize);
            inner_lo.push(domain.lower()[axis] + k);
            inner_hi.push(domain.upper()[axis] - k);
        }
        let inner = BoxDomain::new(inner_lo, inner_hi)?;
        let nodes_per_axis: Vec<usize> = cells_per_axis.iter().map(|c| c + 1).collect();

        let n_vertices: usize = nodes_per_axis.iter().product();
        let mut vertices = Vec::with_capacity(n_vertices * dim);
        let mut idx = vec![0usize; dim];
        for _ in 0..n_vertices {
            for axis in 0..dim {
                let t = idx[axis] as f64 / cells_per_axis[axis] as f64;
                let (lo, hi) = (inner.lower()[axis], inner.upper()[axis]);
                vertices.push(lo * (1.0 - t) + hi * t);
            }
            increment(&mut idx, &nodes_per_axis);
        }

        let permutations = permutations(dim);
        let n_cells: usize = cells_per_axis.iter().product();
        let mut simplices = Vec::with_capacity(n_cells * permutations.len() * (dim + 1));
        let mut cell = vec![0usize; dim];
        let mut corner = vec![0usize; dim];
        for _ in 0..n_cells {
            for perm in &permutations {
                corner.copy_from_slice(&cell);
                simplices.push(linear_index(&corner, &nodes_per_axis));
                for &axis in perm {
                    corner[axis] += 1;
                    simplices.push(linear_index(&corner, &nodes_per_axis));
                }
            }
            increment(&mut cell, &cells_per_axis);
        }

        Ok(Self {
            domain: domain.clone(),
            spacing: k,
            inner,
            cells_per_axis,
            nodes_per_axis,
            vertices,
            simplices,
            permutations,
        })
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Grid spacing `k`.
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Largest simplex diameter of the construction, `k * sqrt(d)`.
    pub fn mesh_size(&self) -> f64 {
        self.spacing * (self.dim() as f64).sqrt()
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    /// The polyhedral domain covered by the simplices.
    pub fn inner(&self) -> &BoxDomain {
        &self.inner
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells_per_axis
    }

    pub fn nodes_per_axis(&self) -> &[usize] {
        &self.nodes_per_axis
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len() / self.dim()
    }

    pub fn num_simplices(&self) -> usize {
        self.simplices.len() / (self.dim() + 1)
    }

    pub fn vertex(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.vertices[i * d..(i + 1) * d]
    }

    pub fn vertices(&self) -> impl Iterator<Item = &[f64]> {
        self.vertices.chunks_exact(self.dim())
    }

    pub fn simplex(&self, j: usize) -> &[usize] {
        let n = self.dim() + 1;
        &self.simplices[j * n..(j + 1) * n]
    }

    pub fn simplices(&self) -> impl Iterator<Item = &[usize]> {
        self.simplices.chunks_exact(self.dim() + 1)
    }

    /// Index of the vertex with the given per-axis grid index.
    pub fn vertex_at(&self, grid_index: &[usize]) -> usize {
        linear_index(grid_index, &self.nodes_per_axis)
    }

    pub fn snap_tolerance(&self) -> f64 {
        LOCATE_SNAP * self.spacing
    }

    /// First axis on which `p` lies outside the inner box beyond the snap
    /// tolerance.
    pub fn outside_axis(&self, p: &[f64]) -> Option<usize> {
        let tol = self.snap_tolerance();
        (0..self.dim()).find(|&axis| {
            let (lo, hi) = (self.inner.lower()[axis], self.inner.upper()[axis]);
            !(p[axis] >= lo - tol && p[axis] <= hi + tol)
        })
    }

    /// Finds the simplex containing `p` by cell arithmetic and returns the
    /// barycentric weights of `p` in it. Points within the snap tolerance of
    /// the inner box are clamped onto it.
    pub fn locate(&self, p: &[f64]) -> Result<BarycentricCoords> {
        let dim = self.dim();
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: format!("point of dimension {dim}"),
                found: format!("dimension {}", p.len()),
            });
        }
        if let Some(axis) = self.outside_axis(p) {
            return Err(Error::OutOfDomain {
                axis,
                coordinate: p[axis],
                lower: self.inner.lower()[axis],
                upper: self.inner.upper()[axis],
            });
        }

        let mut cell = vec![0usize; dim];
        let mut local = vec![0.0f64; dim];
        for axis in 0..dim {
            let n = self.cells_per_axis[axis];
            let (lo, hi) = (self.inner.lower()[axis], self.inner.upper()[axis]);
            let mut s = ((p[axis] - lo) / (hi - lo) * n as f64).clamp(0.0, n as f64);
            // grid lines: absorb rounding so vertices get exact unit weights
            if (s - s.round()).abs() <= GRID_LINE_SNAP {
                s = s.round();
            }
            let c = (s.floor() as usize).min(n - 1);
            cell[axis] = c;
            local[axis] = (s - c as f64).clamp(0.0, 1.0);
        }

        // Kuhn simplex: axes ordered by decreasing local coordinate.
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&i, &j| local[j].total_cmp(&local[i]).then(i.cmp(&j)));
        let perm_index = self
            .permutations
            .iter()
            .position(|perm| *perm == order)
            .expect("every ordering is a Kuhn permutation");

        let mut weights = Vec::with_capacity(dim + 1);
        weights.push(1.0 - local[order[0]]);
        for j in 1..dim {
            weights.push(local[order[j - 1]] - local[order[j]]);
        }
        weights.push(local[order[dim - 1]]);

        let cell_linear = linear_index(&cell, &self.cells_per_axis);
        let simplex = cell_linear * self.permutations.len() + perm_index;
        Ok(BarycentricCoords {
            simplex,
            vertices: self.simplex(simplex).to_vec(),
            weights,
        })
    }

    /// Writes the debugging dump: one `i x1 .. xd` line per vertex followed
    /// by one `j v0 .. vd` line per simplex.
    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<()> {
        for (i, v) in self.vertices().enumerate() {
            let coords: Vec<String> = v.iter().map(|x| format_float(*x)).collect();
            writeln!(out, "{i} {}", coords.join(" "))?;
        }
        for (j, s) in self.simplices().enumerate() {
            let ids: Vec<String> = s.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{j} {}", ids.join(" "))?;
        }
        Ok(())
    }
}

fn linear_index(idx: &[usize], dims: &[usize]) -> usize {
    idx.iter().zip(dims).fold(0, |acc, (i, n)| acc * n + i)
}

/// Advances a multi-index in lexicographic order (last axis fastest).
fn increment(idx: &mut [usize], dims: &[usize]) {
    for axis in (0..idx.len()).rev() {
        idx[axis] += 1;
        if idx[axis] < dims[axis] {
            return;
        }
        idx[axis] = 0;
    }
}

/// Result of checking the triangulation hypotheses for a given time step and
/// control grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshReport {
    pub max_diameter: f64,
    pub min_diameter: f64,
    /// Largest diameter the construction is meant to have (`k sqrt(d)`).
    pub mesh_size: f64,
    pub hip1_ok: bool,
    pub hip2_ok: bool,
    pub hip2_h: f64,
    pub hip2_levels: usize,
    /// Number of `(node, level)` pairs whose image leaves the inner box.
    pub hip2_failures: usize,
    pub hip2_first_failure: Option<(usize, usize)>,
    /// Clearance between a user-supplied compact box and the boundary of the
    /// inner box (negative when the compact set is not contained).
    pub hip3_margin: Option<f64>,
    /// Smallest inradius-to-diameter ratio over all simplices.
    pub chi1: f64,
    pub hip4_ok: bool,
    /// Largest `mesh_size / d_i` over all simplices.
    pub k_over_d_max: f64,
    pub hip5_ok: bool,
}

impl MeshReport {
    /// The hypotheses that can be decided on a single mesh.
    pub fn all_ok(&self) -> bool {
        self.hip1_ok && self.hip2_ok && self.hip4_ok && self.hip5_ok
    }
}

/// Determinant by Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
fn determinant(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        if m[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            m.swap(pivot, col);
            det = -det;
        }
        det *= m[col][col];
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            for c in col..n {
                m[row][c] -= factor * m[col][c];
            }
        }
    }
    det
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// `(r - 1)`-dimensional measure of the simplex spanned by `points`.
fn simplex_measure(points: &[&[f64]]) -> f64 {
    let q = points.len() - 1;
    let edges: Vec<Vec<f64>> = points[1..]
        .iter()
        .map(|p| p.iter().zip(points[0]).map(|(a, b)| a - b).collect())
        .collect();
    let gram: Vec<Vec<f64>> = edges
        .iter()
        .map(|e| {
            edges
                .iter()
                .map(|f| e.iter().zip(f).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    determinant(gram).max(0.0).sqrt() / factorial(q)
}

fn diameter(points: &[&[f64]]) -> f64 {
    let mut d: f64 = 0.0;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            d = d.max(
                p.iter()
                    .zip(*q)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt(),
            );
        }
    }
    d
}

fn inradius(points: &[&[f64]]) -> f64 {
    let dim = points.len() - 1;
    let volume = simplex_measure(points);
    let boundary: f64 = (0..points.len())
        .map(|skip| {
            let facet: Vec<&[f64]> = points
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != skip)
                .map(|(_, p)| *p)
                .collect();
            simplex_measure(&facet)
        })
        .sum();
    dim as f64 * volume / boundary
}

/// Evaluates the triangulation hypotheses for time step `h` and the control
/// levels of `grid`.
///
/// The invariance check tests exactly the points the discrete Bellman
/// operator evaluates: `x^i + h g(x^i, a)` for every vertex and level.
pub fn check_hypotheses(
    tri: &Triangulation,
    spec: &ProblemSpec,
    h: f64,
    grid: &ControlGrid,
    compact: Option<&BoxDomain>,
) -> MeshReport {
    let mut max_diameter: f64 = 0.0;
    let mut min_diameter = f64::INFINITY;
    let mut chi1 = f64::INFINITY;
    for s in tri.simplices() {
        let pts: Vec<&[f64]> = s.iter().map(|&v| tri.vertex(v)).collect();
        let d = diameter(&pts);
        max_diameter = max_diameter.max(d);
        min_diameter = min_diameter.min(d);
        chi1 = chi1.min(inradius(&pts) / d);
    }
    let mesh_size = tri.mesh_size();
    let hip1_ok = (max_diameter - mesh_size).abs() <= 1e-12 * mesh_size;
    let k_over_d_max = max_diameter / min_diameter;

    let mut hip2_failures = 0;
    let mut hip2_first_failure = None;
    for (node, x) in tri.vertices().enumerate() {
        for level in 0..grid.num_levels() {
            let g = spec.dynamics(x, grid.level(level));
            let image: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi + h * gi).collect();
            if tri.outside_axis(&image).is_some() {
                hip2_failures += 1;
                hip2_first_failure.get_or_insert((node, level));
            }
        }
    }

    let hip3_margin = compact.map(|c| {
        let inner = tri.inner();
        (0..tri.dim())
            .map(|axis| {
                (c.lower()[axis] - inner.lower()[axis]).min(inner.upper()[axis] - c.upper()[axis])
            })
            .fold(f64::INFINITY, f64::min)
    });

    MeshReport {
        max_diameter,
        min_diameter,
        mesh_size,
        hip1_ok,
        hip2_ok: hip2_failures == 0,
        hip2_h: h,
        hip2_levels: grid.num_levels(),
        hip2_failures,
        hip2_first_failure,
        hip3_margin,
        chi1,
        hip4_ok: chi1.is_finite() && chi1 > 0.0,
        k_over_d_max,
        hip5_ok: k_over_d_max.is_finite() && k_over_d_max >= 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::control_grid;
    use crate::problem::{builtin, BuiltinProblemId};

    fn square() -> BoxDomain {
        BoxDomain::cube(2, -1.0, 1.0).unwrap()
    }

    #[test]
    fn half_spacing_mesh() {
        let tri = build_uniform(&square(), 0.5).unwrap();
        assert_eq!(tri.num_vertices(), 9);
        assert_eq!(tri.num_simplices(), 8);
        assert_eq!(tri.inner().lower(), &[-0.5, -0.5]);
        assert_eq!(tri.inner().upper(), &[0.5, 0.5]);
        assert_eq!(tri.vertex(0), &[-0.5, -0.5]);
        assert_eq!(tri.vertex(1), &[-0.5, 0.0]);
        assert_eq!(tri.vertex(4), &[0.0, 0.0]);
        assert_eq!(tri.vertex(8), &[0.5, 0.5]);
        // Both triangles of the first cell share the main diagonal 0 -> 4.
        assert_eq!(tri.simplex(0), &[0, 3, 4]);
        assert_eq!(tri.simplex(1), &[0, 1, 4]);
    }

    #[test]
    fn vertex_counts() {
        assert_eq!(build_uniform(&square(), 0.1).unwrap().num_vertices(), 361);
        assert_eq!(
            build_uniform(&square(), 0.05).unwrap().num_vertices(),
            39 * 39
        );
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(build_uniform(&square(), 1.5), Err(Error::Mesh(_))));
        assert!(matches!(build_uniform(&square(), 1.0), Err(Error::Mesh(_))));
        assert!(matches!(build_uniform(&square(), 0.3), Err(Error::Mesh(_))));
        assert!(matches!(build_uniform(&square(), 0.0), Err(Error::Mesh(_))));
    }

    #[test]
    fn snapping() {
        let k = snap_spacing(&square(), 0.3).unwrap();
        assert!((k - 2.0 / 7.0).abs() < 1e-15);
        assert!(build_uniform(&square(), k).is_ok());
        assert_eq!(snap_spacing(&square(), 0.1).unwrap(), 0.1);
    }

    #[test]
    fn deterministic_construction() {
        let a = build_uniform(&square(), 0.2).unwrap();
        let b = build_uniform(&square(), 0.2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn locate_vertices_and_centroids() {
        let tri = build_uniform(&square(), 0.25).unwrap();
        for i in 0..tri.num_vertices() {
            let bc = tri.locate(tri.vertex(i)).unwrap();
            for (v, w) in bc.vertices.iter().zip(&bc.weights) {
                let expected = if *v == i { 1.0 } else { 0.0 };
                assert!((w - expected).abs() < 1e-12, "vertex {i}: {bc:?}");
            }
        }
        for j in 0..tri.num_simplices() {
            let s = tri.simplex(j);
            let mut c = [0.0; 2];
            for &v in s {
                c[0] += tri.vertex(v)[0] / 3.0;
                c[1] += tri.vertex(v)[1] / 3.0;
            }
            let bc = tri.locate(&c).unwrap();
            assert_eq!(bc.simplex, j);
            for w in &bc.weights {
                assert!((w - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn locate_out_of_domain() {
        let tri = build_uniform(&square(), 0.5).unwrap();
        match tri.locate(&[0.6, 0.0]) {
            Err(Error::OutOfDomain {
                axis, coordinate, ..
            }) => {
                assert_eq!(axis, 0);
                assert_eq!(coordinate, 0.6);
            }
            other => panic!("unexpected {other:?}"),
        }
        // within the snap tolerance: clamped
        let bc = tri.locate(&[0.5 + 1e-12, -0.5 - 1e-12]).unwrap();
        assert!(bc.weights.iter().all(|w| *w >= 0.0));
        assert!(tri.locate(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn kuhn_three_dimensional() {
        let cube = BoxDomain::cube(3, 0.0, 4.0).unwrap();
        let tri = build_uniform(&cube, 1.0).unwrap();
        assert_eq!(tri.num_vertices(), 27);
        assert_eq!(tri.num_simplices(), 8 * 6);
        let p = [1.3, 2.7, 2.1];
        let bc = tri.locate(&p).unwrap();
        let mut q = [0.0; 3];
        for (v, w) in bc.vertices.iter().zip(&bc.weights) {
            for (qd, vd) in q.iter_mut().zip(tri.vertex(*v)) {
                *qd += w * vd;
            }
        }
        for d in 0..3 {
            assert!((q[d] - p[d]).abs() < 1e-12);
        }
        assert!(bc.weights.iter().all(|w| *w >= 0.0));
    }

    #[test]
    fn hypotheses_on_builtin_example() {
        let spec = builtin(BuiltinProblemId::PaperExample2d);
        let tri = build_uniform(&square(), 0.5).unwrap();
        let grid = control_grid(0.5).unwrap();
        let report = check_hypotheses(&tri, &spec, 0.5, &grid, None);
        assert!(report.hip2_ok);
        assert!(report.all_ok());
        assert!((report.k_over_d_max - 1.0).abs() < 1e-12);
        assert!((report.max_diameter - 0.5 * 2f64.sqrt()).abs() < 1e-12);
        // right isosceles triangle: inradius / hypotenuse = (1 - 1/sqrt 2)/sqrt 2
        let chi = (1.0 - 1.0 / 2f64.sqrt()) / 2f64.sqrt();
        assert!((report.chi1 - chi).abs() < 1e-12);

        let report = check_hypotheses(&tri, &spec, 2.0, &grid, None);
        assert!(!report.hip2_ok);
        assert!(report.hip2_failures > 0);

        let tri = build_uniform(&square(), 0.1).unwrap();
        let grid = control_grid(0.1).unwrap();
        let compact = BoxDomain::cube(2, -0.5, 0.5).unwrap();
        let report = check_hypotheses(&tri, &spec, 0.1, &grid, Some(&compact));
        assert!(report.all_ok());
        assert!((report.hip3_margin.unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn measures() {
        let pts: [&[f64]; 3] = [&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]];
        assert!((simplex_measure(&pts) - 0.5).abs() < 1e-15);
        assert!((inradius(&pts) - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-15);
        let seg: [&[f64]; 2] = [&[0.0], &[2.0]];
        assert!((inradius(&seg) - 1.0).abs() < 1e-15);
    }
}
