//! One-step dynamic-programming operators on the finite element space.
//!
//! For a nodal field `w`, the operator with fixed next control `b` is
//!
//! ```text
//! (A^b w)(x^i, a) = (1 - lambda h) w(x^i + h g(x^i, a), b) + h f(x^i, a)
//! ```
//!
//! and the Bellman operator takes the minimum over the admissible
//! `b in {a, a + h, ..., 1}`. [`BellmanOperator`] precomputes the image
//! points and stage costs once per `(node, level)` so repeated sweeps only
//! touch nodal values.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fespace::{ControlGrid, GridFunction};
use crate::mesh::Triangulation;
use crate::problem::ProblemSpec;

/// Admissible next-control index for every `(node, level)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolicyField {
    levels: usize,
    choice: Vec<usize>,
}

impl PolicyField {
    /// The policy that never raises the control: `b = a` everywhere.
    pub fn hold(nodes: usize, levels: usize) -> Self {
        Self {
            levels,
            choice: (0..nodes).flat_map(|_| 0..levels).collect(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.choice.len() / self.levels
    }

    pub fn num_levels(&self) -> usize {
        self.levels
    }

    pub fn get(&self, node: usize, level: usize) -> usize {
        self.choice[node * self.levels + level]
    }

    pub fn choices(&self) -> &[usize] {
        &self.choice
    }

    pub fn is_admissible(&self) -> bool {
        self.choice
            .iter()
            .enumerate()
            .all(|(i, b)| *b >= i % self.levels && *b < self.levels)
    }

    /// Writes `node,x1,..,xd,a,b` with control values.
    pub fn write_csv<W: std::io::Write>(
        &self,
        tri: &Triangulation,
        grid: &ControlGrid,
        mut out: W,
    ) -> Result<()> {
        use crate::io::{coordinate_header, format_float, join_floats};
        writeln!(out, "node,{},a,b", coordinate_header(tri.dim()))?;
        for (node, x) in tri.vertices().enumerate() {
            let coords = join_floats(x, ",");
            for level in 0..self.levels {
                writeln!(
                    out,
                    "{node},{coords},{},{}",
                    format_float(grid.level(level)),
                    format_float(grid.level(self.get(node, level)))
                )?;
            }
        }
        Ok(())
    }
}

/// What to do with image points outside the discrete domain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ImageMode {
    /// Report an error naming the node and control level.
    #[default]
    Strict,
    /// Project the image onto the inner box. This changes the scheme.
    Clamp,
}

/// Precomputed Bellman operator for one mesh, control grid and time step.
#[derive(Clone, Debug)]
pub struct BellmanOperator {
    nodes: usize,
    levels: usize,
    stride: usize,
    discount_factor: f64,
    h: f64,
    image_vertices: Vec<usize>,
    image_weights: Vec<f64>,
    stage_cost: Vec<f64>,
}

/// Checks `0 < h < 1/lambda` and that `h` is the step of `grid`.
pub(crate) fn check_step(spec: &ProblemSpec, grid: &ControlGrid, h: f64) -> Result<()> {
    if !(h > 0.0 && h * spec.discount() < 1.0) {
        return Err(Error::Config(format!(
            "time step must satisfy 0 < h < 1/lambda = {}, got {h}",
            1.0 / spec.discount()
        )));
    }
    if (h - grid.step()).abs() > 1e-9 * h {
        return Err(Error::Config(format!(
            "time step {h} differs from the control grid step {}",
            grid.step()
        )));
    }
    Ok(())
}

fn image_point(spec: &ProblemSpec, x: &[f64], a: f64, h: f64) -> Vec<f64> {
    let g = spec.dynamics(x, a);
    x.iter().zip(&g).map(|(xi, gi)| xi + h * gi).collect()
}

fn clamp_to(tri: &Triangulation, p: &mut [f64]) {
    let inner = tri.inner();
    for (axis, v) in p.iter_mut().enumerate() {
        *v = v.clamp(inner.lower()[axis], inner.upper()[axis]);
    }
}

impl BellmanOperator {
    pub fn new(
        spec: &ProblemSpec,
        tri: &Triangulation,
        grid: &ControlGrid,
        h: f64,
        mode: ImageMode,
    ) -> Result<Self> {
        check_step(spec, grid, h)?;
        if spec.dim() != tri.dim() {
            return Err(Error::DimensionMismatch {
                expected: format!("mesh of dimension {}", spec.dim()),
                found: format!("dimension {}", tri.dim()),
            });
        }
        let nodes = tri.num_vertices();
        let levels = grid.num_levels();
        let stride = tri.dim() + 1;

        let per_node: Vec<(Vec<usize>, Vec<f64>, Vec<f64>)> = (0..nodes)
            .into_par_iter()
            .map(|node| {
                let x = tri.vertex(node);
                let mut verts = Vec::with_capacity(levels * stride);
                let mut weights = Vec::with_capacity(levels * stride);
                let mut costs = Vec::with_capacity(levels);
                for level in 0..levels {
                    let a = grid.level(level);
                    let mut image = image_point(spec, x, a, h);
                    if mode == ImageMode::Clamp {
                        clamp_to(tri, &mut image);
                    }
                    let bc = tri.locate(&image).map_err(|e| match e {
                        Error::OutOfDomain {
                            axis, coordinate, ..
                        } => Error::ImageOutOfDomain {
                            node,
                            level,
                            axis,
                            coordinate,
                        },
                        other => other,
                    })?;
                    verts.extend_from_slice(&bc.vertices);
                    weights.extend_from_slice(&bc.weights);
                    costs.push(h * spec.cost(x, a));
                }
                Ok((verts, weights, costs))
            })
            .collect::<Result<_>>()?;

        let mut image_vertices = Vec::with_capacity(nodes * levels * stride);
        let mut image_weights = Vec::with_capacity(nodes * levels * stride);
        let mut stage_cost = Vec::with_capacity(nodes * levels);
        for (v, w, c) in per_node {
            image_vertices.extend(v);
            image_weights.extend(w);
            stage_cost.extend(c);
        }

        Ok(Self {
            nodes,
            levels,
            stride,
            discount_factor: 1.0 - spec.discount() * h,
            h,
            image_vertices,
            image_weights,
            stage_cost,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes
    }

    pub fn num_levels(&self) -> usize {
        self.levels
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    /// `1 - lambda h`, the contraction factor of the operator.
    pub fn discount_factor(&self) -> f64 {
        self.discount_factor
    }

    /// `h f(x^i, a)`.
    pub fn stage_cost(&self, node: usize, level: usize) -> f64 {
        self.stage_cost[node * self.levels + level]
    }

    /// `w(x^i + h g(x^i, a), b)`.
    #[inline]
    pub fn continuation(&self, w: &GridFunction, node: usize, level: usize, b: usize) -> f64 {
        let base = (node * self.levels + level) * self.stride;
        let verts = &self.image_vertices[base..base + self.stride];
        let weights = &self.image_weights[base..base + self.stride];
        let vals = w.values();
        verts
            .iter()
            .zip(weights)
            .map(|(v, wt)| wt * vals[v * self.levels + b])
            .sum()
    }

    fn check(&self, w: &GridFunction) -> Result<()> {
        if w.num_nodes() != self.nodes || w.num_levels() != self.levels {
            return Err(Error::DimensionMismatch {
                expected: format!("{} nodes x {} levels", self.nodes, self.levels),
                found: format!("{} nodes x {} levels", w.num_nodes(), w.num_levels()),
            });
        }
        Ok(())
    }

    pub fn apply_fixed_control(
        &self,
        w: &GridFunction,
        node: usize,
        level: usize,
        b: usize,
    ) -> f64 {
        debug_assert!(b >= level && b < self.levels);
        self.discount_factor * self.continuation(w, node, level, b) + self.stage_cost(node, level)
    }

    /// Minimum over admissible `b` and the smallest minimizing index.
    #[inline]
    fn best(&self, w: &GridFunction, node: usize, level: usize) -> (f64, usize) {
        let mut best_b = level;
        let mut best = self.continuation(w, node, level, level);
        for b in level + 1..self.levels {
            let c = self.continuation(w, node, level, b);
            if c < best {
                best = c;
                best_b = b;
            }
        }
        (
            self.discount_factor * best + self.stage_cost(node, level),
            best_b,
        )
    }

    /// One Jacobi sweep: new values and the minimizing policy. Ties resolve
    /// to the smallest admissible `b`.
    pub fn apply(&self, w: &GridFunction) -> Result<(GridFunction, PolicyField)> {
        self.check(w)?;
        let mut out = vec![0.0; self.nodes * self.levels];
        let mut choice = vec![0usize; self.nodes * self.levels];
        out.par_chunks_mut(self.levels)
            .zip(choice.par_chunks_mut(self.levels))
            .enumerate()
            .for_each(|(node, (vals, pol))| {
                for level in 0..self.levels {
                    let (v, b) = self.best(w, node, level);
                    vals[level] = v;
                    pol[level] = b;
                }
            });
        Ok((
            GridFunction::from_values(self.nodes, self.levels, out)?,
            PolicyField {
                levels: self.levels,
                choice,
            },
        ))
    }

    pub fn greedy_policy(&self, w: &GridFunction) -> Result<PolicyField> {
        self.check(w)?;
        let mut choice = vec![0usize; self.nodes * self.levels];
        choice
            .par_chunks_mut(self.levels)
            .enumerate()
            .for_each(|(node, pol)| {
                for (level, slot) in pol.iter_mut().enumerate() {
                    *slot = self.best(w, node, level).1;
                }
            });
        Ok(PolicyField {
            levels: self.levels,
            choice,
        })
    }

    /// One sweep of the linear operator with the policy frozen.
    pub fn apply_policy(&self, w: &GridFunction, policy: &PolicyField) -> Result<GridFunction> {
        self.check(w)?;
        if policy.levels != self.levels || policy.num_nodes() != self.nodes {
            return Err(Error::DimensionMismatch {
                expected: format!("policy of {} nodes x {} levels", self.nodes, self.levels),
                found: format!("{} nodes x {} levels", policy.num_nodes(), policy.levels),
            });
        }
        let mut out = vec![0.0; self.nodes * self.levels];
        out.par_chunks_mut(self.levels)
            .enumerate()
            .for_each(|(node, vals)| {
                for (level, slot) in vals.iter_mut().enumerate() {
                    let b = policy.get(node, level);
                    *slot = self.apply_fixed_control(w, node, level, b);
                }
            });
        GridFunction::from_values(self.nodes, self.levels, out)
    }
}

/// `(A^b w)(x^i, a)` for a single node, computed without precomputation.
#[allow(clippy::too_many_arguments)]
pub fn apply_fixed_control(
    w: &GridFunction,
    spec: &ProblemSpec,
    tri: &Triangulation,
    grid: &ControlGrid,
    h: f64,
    node: usize,
    a_index: usize,
    b_index: usize,
) -> Result<f64> {
    check_step(spec, grid, h)?;
    w.check_shape(tri, grid)?;
    if b_index < a_index || b_index > grid.top() {
        return Err(Error::Config(format!(
            "next control index {b_index} is not admissible from level {a_index}"
        )));
    }
    let x = tri.vertex(node);
    let a = grid.level(a_index);
    let image = image_point(spec, x, a, h);
    let bc = tri.locate(&image).map_err(|e| match e {
        Error::OutOfDomain {
            axis, coordinate, ..
        } => Error::ImageOutOfDomain {
            node,
            level: a_index,
            axis,
            coordinate,
        },
        other => other,
    })?;
    Ok((1.0 - spec.discount() * h) * w.evaluate_at(&bc, b_index) + h * spec.cost(x, a))
}

/// One application of the Bellman operator.
pub fn apply(
    w: &GridFunction,
    spec: &ProblemSpec,
    tri: &Triangulation,
    grid: &ControlGrid,
    h: f64,
) -> Result<(GridFunction, PolicyField)> {
    BellmanOperator::new(spec, tri, grid, h, ImageMode::Strict)?.apply(w)
}

pub fn greedy_policy(
    w: &GridFunction,
    spec: &ProblemSpec,
    tri: &Triangulation,
    grid: &ControlGrid,
    h: f64,
) -> Result<PolicyField> {
    BellmanOperator::new(spec, tri, grid, h, ImageMode::Strict)?.greedy_policy(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::control_grid;
    use crate::mesh::build_uniform;
    use crate::problem::{builtin, BoxDomain, BuiltinProblemId, ProblemConstants};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn paper(k: f64) -> (ProblemSpec, Triangulation, ControlGrid) {
        let spec = builtin(BuiltinProblemId::PaperExample2d);
        let tri = build_uniform(spec.domain(), k).unwrap();
        (spec, tri, control_grid(k).unwrap())
    }

    fn zero_cost_spec() -> ProblemSpec {
        builtin(BuiltinProblemId::ZeroCost2d)
    }

    #[test]
    fn fixed_control_examples() {
        let (spec, tri, grid) = paper(0.5);
        let zero = GridFunction::zeros_on(&tri, &grid);
        let node = tri.vertex_at(&[2, 2]);
        assert_eq!(tri.vertex(node), &[0.5, 0.5]);
        let v = apply_fixed_control(&zero, &spec, &tri, &grid, 0.5, node, 2, 2).unwrap();
        assert_eq!(v, -0.125);
        for b in 0..3 {
            for i in 0..tri.num_vertices() {
                let v = apply_fixed_control(&zero, &spec, &tri, &grid, 0.5, i, 0, b).unwrap();
                assert_eq!(v, 0.5 * spec.cost(tri.vertex(i), 0.0));
            }
        }
        let c = GridFunction::constant(9, 3, 2.0);
        let v = apply_fixed_control(&c, &spec, &tri, &grid, 0.5, node, 1, 2).unwrap();
        assert!((v - (0.5 * 2.0 + 0.5 * spec.cost(&[0.5, 0.5], 0.5))).abs() < 1e-15);
        assert!(apply_fixed_control(&c, &spec, &tri, &grid, 0.5, node, 2, 1).is_err());
    }

    #[test]
    fn step_validation() {
        let (spec, tri, grid) = paper(0.5);
        assert!(BellmanOperator::new(&spec, &tri, &grid, 0.25, ImageMode::Strict).is_err());
        let spec = spec.with_discount(2.0).unwrap();
        assert!(matches!(
            BellmanOperator::new(&spec, &tri, &grid, 0.5, ImageMode::Strict),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn apply_on_zero() {
        let (spec, tri, grid) = paper(0.25);
        let zero = GridFunction::zeros_on(&tri, &grid);
        let (next, policy) = apply(&zero, &spec, &tri, &grid, 0.25).unwrap();
        for i in 0..tri.num_vertices() {
            for l in 0..grid.num_levels() {
                assert_eq!(
                    next.get(i, l),
                    0.25 * spec.cost(tri.vertex(i), grid.level(l))
                );
                assert_eq!(policy.get(i, l), l);
            }
        }
    }

    #[test]
    fn top_level_is_singleton() {
        let (spec, tri, grid) = paper(0.25);
        let w = GridFunction::from_fn(&tri, &grid, |x, a| x[0] * x[1] - a);
        let (next, policy) = apply(&w, &spec, &tri, &grid, 0.25).unwrap();
        let top = grid.top();
        for i in 0..tri.num_vertices() {
            let x = tri.vertex(i);
            let image: Vec<f64> = x.iter().map(|v| v * (1.0 - 0.25 * 2.0)).collect();
            let expected = 0.75 * w.evaluate(&tri, &image, top).unwrap() + 0.25 * spec.cost(x, 1.0);
            assert!((next.get(i, top) - expected).abs() < 1e-14);
            assert_eq!(policy.get(i, top), top);
        }
    }

    #[test]
    fn constants_propagate() {
        let (spec, tri, grid) = paper(0.25);
        let n = tri.num_vertices();
        let (a, _) = apply(&GridFunction::constant(n, 5, 3.0), &spec, &tri, &grid, 0.25).unwrap();
        let (b, _) = apply(
            &GridFunction::constant(n, 5, -1.0),
            &spec,
            &tri,
            &grid,
            0.25,
        )
        .unwrap();
        assert!((a.sup_norm_diff(&b).unwrap() - 0.75 * 4.0).abs() < 1e-14);
    }

    #[test]
    fn greedy_policy_direction() {
        let spec = zero_cost_spec();
        let tri = build_uniform(spec.domain(), 0.25).unwrap();
        let grid = control_grid(0.25).unwrap();
        let zero = GridFunction::zeros_on(&tri, &grid);
        let pol = greedy_policy(&zero, &spec, &tri, &grid, 0.25).unwrap();
        assert_eq!(pol, PolicyField::hold(tri.num_vertices(), 5));

        let inc = GridFunction::from_fn(&tri, &grid, |_, a| a);
        let pol = greedy_policy(&inc, &spec, &tri, &grid, 0.25).unwrap();
        assert_eq!(pol, PolicyField::hold(tri.num_vertices(), 5));

        let dec = GridFunction::from_fn(&tri, &grid, |_, a| -a);
        let pol = greedy_policy(&dec, &spec, &tri, &grid, 0.25).unwrap();
        assert!(pol.choices().iter().all(|b| *b == 4));
        assert!(pol.is_admissible());
    }

    #[test]
    fn out_of_domain_image_names_node() {
        // g pushes every point to the right by 10
        let spec = ProblemSpec::new(
            "drift",
            BoxDomain::cube(1, -1.0, 1.0).unwrap(),
            1.0,
            Arc::new(|_: &[f64], _: f64| vec![10.0]),
            Arc::new(|_: &[f64], _: f64| 0.0),
            ProblemConstants {
                lip_g: 0.0,
                bound_g: 10.0,
                lip_f: 0.0,
                bound_f: 0.0,
            },
        )
        .unwrap();
        let tri = build_uniform(spec.domain(), 0.5).unwrap();
        let grid = control_grid(0.5).unwrap();
        let err = BellmanOperator::new(&spec, &tri, &grid, 0.5, ImageMode::Strict).unwrap_err();
        assert!(
            matches!(
                err,
                Error::ImageOutOfDomain {
                    node: 0,
                    level: 0,
                    ..
                }
            ),
            "{err}"
        );
        let op = BellmanOperator::new(&spec, &tri, &grid, 0.5, ImageMode::Clamp).unwrap();
        let w = GridFunction::from_fn(&tri, &grid, |x, _| x[0]);
        assert!((op.continuation(&w, 0, 0, 0) - 0.5).abs() < 1e-15);
    }

    fn random_field(n: usize, levels: usize, seed: &[f64]) -> GridFunction {
        GridFunction::from_values(
            n,
            levels,
            seed.iter().cycle().take(n * levels).copied().collect(),
        )
        .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn contraction(
            u in prop::collection::vec(-3.0f64..3.0, 1..60),
            v in prop::collection::vec(-3.0f64..3.0, 1..60),
        ) {
            let (spec, tri, grid) = paper(0.25);
            let op = BellmanOperator::new(&spec, &tri, &grid, 0.25, ImageMode::Strict).unwrap();
            let n = tri.num_vertices();
            let (w, wb) = (random_field(n, 5, &u), random_field(n, 5, &v));
            let (aw, _) = op.apply(&w).unwrap();
            let (awb, _) = op.apply(&wb).unwrap();
            let lhs = aw.sup_norm_diff(&awb).unwrap();
            prop_assert!(lhs <= 0.75 * w.sup_norm_diff(&wb).unwrap() + 1e-12);
        }

        #[test]
        fn monotone_and_shift(
            u in prop::collection::vec(-3.0f64..3.0, 1..60),
            bump in prop::collection::vec(0.0f64..2.0, 1..60),
            c in -5.0f64..5.0,
        ) {
            let (spec, tri, grid) = paper(0.25);
            let op = BellmanOperator::new(&spec, &tri, &grid, 0.25, ImageMode::Strict).unwrap();
            let n = tri.num_vertices();
            let w = random_field(n, 5, &u);
            let mut hi = w.clone();
            for (x, b) in hi.values_mut().iter_mut().zip(bump.iter().cycle()) {
                *x += b;
            }
            let (aw, _) = op.apply(&w).unwrap();
            let (ahi, _) = op.apply(&hi).unwrap();
            for (p, q) in aw.values().iter().zip(ahi.values()) {
                prop_assert!(p <= q);
            }
            let shifted = GridFunction::from_values(n, 5, w.values().iter().map(|x| x + c).collect()).unwrap();
            let (ash, _) = op.apply(&shifted).unwrap();
            for (p, q) in aw.values().iter().zip(ash.values()) {
                prop_assert!((q - p - 0.75 * c).abs() < 1e-12);
            }
        }

        #[test]
        fn smaller_admissible_set_never_lowers_min(u in prop::collection::vec(-3.0f64..3.0, 1..60)) {
            let (spec, tri, grid) = paper(0.25);
            let op = BellmanOperator::new(&spec, &tri, &grid, 0.25, ImageMode::Strict).unwrap();
            let w = random_field(tri.num_vertices(), 5, &u);
            // Freeze the (x, a)-dependent terms at level a and compare the
            // minimum over I_h(a') for a' >= a.
            for node in 0..tri.num_vertices() {
                for a in 0..5 {
                    let min_from = |start: usize| (start..5)
                        .map(|b| op.apply_fixed_control(&w, node, a, b))
                        .fold(f64::INFINITY, f64::min);
                    let base = min_from(a);
                    for a2 in a..5 {
                        prop_assert!(min_from(a2) >= base);
                    }
                }
            }
        }
    }
}
