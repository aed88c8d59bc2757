//! Convergence studies: theoretical error envelopes, mesh sweeps with
//! empirical rate fitting, and an exhaustive-search oracle for the
//! finite-horizon recursion.

use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};
use crate::fespace::{ControlGrid, GridFunction};
use crate::io::format_float;
use crate::mesh::{build_uniform, Triangulation};
use crate::problem::{gamma_for, holder_exponent, ProblemSpec};
use crate::solver::{solve, SolveOptions};

/// Factor applied to [`theoretical_envelope`] when checking measured errors;
/// it stands in for the unknown constant of the error estimate.
pub const ENVELOPE_SLACK: f64 = 50.0;

/// Largest number of monotone control sequences the oracle will enumerate.
pub const ORACLE_SEQUENCE_LIMIT: u128 = 1_000_000;
/// Largest scenario tree (controls times interpolation branches) per start.
pub const ORACLE_TREE_LIMIT: u128 = 100_000_000;

/// Inputs of the error-bound shapes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundParams {
    pub gamma: f64,
    pub lip_g: f64,
    pub discount: f64,
    pub bound_f: f64,
    pub horizon: f64,
    pub h: f64,
    pub k: f64,
}

impl BoundParams {
    pub fn from_spec(spec: &ProblemSpec, horizon: f64, h: f64, k: f64) -> Result<Self> {
        Ok(Self {
            gamma: holder_exponent(spec)?,
            lip_g: spec.constants().lip_g,
            discount: spec.discount(),
            bound_f: spec.constants().bound_f,
            horizon,
            h,
            k,
        })
    }

    /// Builds parameters from raw constants; `gamma_override` is needed only
    /// when `discount == lip_g`.
    pub fn from_constants(
        lip_g: f64,
        discount: f64,
        bound_f: f64,
        gamma_override: Option<f64>,
        horizon: f64,
        h: f64,
        k: f64,
    ) -> Result<Self> {
        Ok(Self {
            gamma: gamma_for(discount, lip_g, gamma_override)?,
            lip_g,
            discount,
            bound_f,
            horizon,
            h,
            k,
        })
    }
}

/// Shape `(h + k / sqrt(h))^gamma` of the error estimate for the fully
/// discrete value function.
pub fn theoretical_envelope(p: &BoundParams) -> Result<f64> {
    if !(p.h > 0.0 && p.k >= 0.0) {
        return Err(Error::Config(format!(
            "envelope needs h > 0 and k >= 0, got h = {}, k = {}",
            p.h, p.k
        )));
    }
    Ok((p.h + p.k / p.h.sqrt()).powf(p.gamma))
}

/// Growth factor of the space-discretization error over horizon `T`.
pub fn phi_t(lip_g: f64, discount: f64, horizon: f64) -> f64 {
    if lip_g < discount {
        1.0
    } else if lip_g > discount {
        ((lip_g - discount) * horizon).exp()
    } else {
        horizon
    }
}

/// Growth factor of the time-discretization error at step `n`.
pub fn phi_n(lip_g: f64, discount: f64, n: usize, h: f64, horizon: f64) -> f64 {
    let t = n as f64 * h;
    if lip_g > discount {
        ((lip_g - discount) * horizon + discount * t).exp()
    } else if lip_g == discount {
        horizon * (lip_g * t).exp()
    } else {
        (lip_g * t).exp()
    }
}

/// `(M_f / lambda) e^{-lambda T}`: truncation error of horizon `T`.
pub fn tail_bound(bound_f: f64, discount: f64, horizon: f64) -> f64 {
    bound_f / discount * (-discount * horizon).exp()
}

pub fn phi_t_for(spec: &ProblemSpec, horizon: f64) -> f64 {
    phi_t(spec.constants().lip_g, spec.discount(), horizon)
}

pub fn phi_n_for(spec: &ProblemSpec, n: usize, h: f64, horizon: f64) -> f64 {
    phi_n(spec.constants().lip_g, spec.discount(), n, h, horizon)
}

pub fn tail_bound_for(spec: &ProblemSpec, horizon: f64) -> f64 {
    tail_bound(spec.constants().bound_f, spec.discount(), horizon)
}

/// How the time step follows the mesh size in a sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coupling {
    /// `h = k`.
    Equal,
    /// `h = c k^{2/3}`, snapped so that `1/h` is an integer.
    TwoThirds { c: f64 },
}

impl Coupling {
    pub fn tag(&self) -> &'static str {
        match self {
            Coupling::Equal => "h=k",
            Coupling::TwoThirds { .. } => "h=c*k^(2/3)",
        }
    }

    pub fn step_for(&self, k: f64) -> Result<f64> {
        match *self {
            Coupling::Equal => Ok(k),
            Coupling::TwoThirds { c } => {
                if !(c.is_finite() && c > 0.0) {
                    return Err(Error::Config(format!(
                        "coupling constant must be > 0, got {c}"
                    )));
                }
                let raw = c * k.powf(2.0 / 3.0);
                let intervals = (1.0 / raw).round().max(1.0);
                Ok(1.0 / intervals)
            }
        }
    }
}

impl fmt::Display for Coupling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// What the sweep compares each row against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ReferenceMode {
    /// The finest successful row, interpolated at the coarser nodes.
    #[default]
    FinestGrid,
    /// Skip the reference comparison.
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub k: f64,
    pub h: f64,
    pub coupling: Coupling,
    pub iterations: Option<usize>,
    pub guaranteed_error: Option<f64>,
    pub error_vs_reference: Option<f64>,
    /// Largest nodal error on the top control level against the problem's
    /// closed-form slice.
    pub error_vs_analytic_slice: Option<f64>,
    pub envelope: f64,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub rate_vs_reference: Option<f64>,
    pub rate_vs_analytic: Option<f64>,
}

impl SweepResult {
    /// Writes `k,h,coupling,iterations,error_ref,error_analytic,envelope`
    /// followed by a `rate` footer row with the fitted exponents.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let opt = |v: Option<f64>| v.map(format_float).unwrap_or_default();
        writeln!(
            out,
            "k,h,coupling,iterations,error_ref,error_analytic,envelope"
        )?;
        for row in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                format_float(row.k),
                format_float(row.h),
                row.coupling.tag(),
                row.iterations.map(|n| n.to_string()).unwrap_or_default(),
                opt(row.error_vs_reference),
                opt(row.error_vs_analytic_slice),
                format_float(row.envelope)
            )?;
        }
        writeln!(
            out,
            "rate,,,,{},{},",
            opt(self.rate_vs_reference),
            opt(self.rate_vs_analytic)
        )?;
        Ok(())
    }
}

struct Solved {
    tri: Triangulation,
    grid: ControlGrid,
    value: GridFunction,
}

/// Solves on every mesh size of `k_list` (ordered coarse to fine) and
/// measures errors against the finest solution and, when the problem has
/// one, the closed-form top slice. A failing row is recorded and the sweep
/// continues.
pub fn run_sweep(
    spec: &ProblemSpec,
    k_list: &[f64],
    coupling: Coupling,
    reference: ReferenceMode,
    template: &SolveOptions,
) -> Result<SweepResult> {
    if k_list.is_empty() {
        return Err(Error::Config("sweep needs at least one mesh size".into()));
    }
    let gamma = holder_exponent(spec)?;
    let mut ks = k_list.to_vec();
    ks.sort_by(|a, b| b.total_cmp(a));

    let mut rows = Vec::with_capacity(ks.len());
    let mut solved: Vec<Option<Solved>> = Vec::with_capacity(ks.len());
    for &k in &ks {
        let mut row = SweepRow {
            k,
            h: f64::NAN,
            coupling,
            iterations: None,
            guaranteed_error: None,
            error_vs_reference: None,
            error_vs_analytic_slice: None,
            envelope: f64::NAN,
            failure: None,
        };
        let attempt = (|| -> Result<Solved> {
            let h = coupling.step_for(k)?;
            row.h = h;
            row.envelope = (h + k / h.sqrt()).powf(gamma);
            let tri = build_uniform(spec.domain(), k)?;
            let grid = ControlGrid::new(h)?;
            let mut opts = template.clone();
            opts.h = h;
            let sol = solve(spec, &tri, &grid, &opts)?;
            row.iterations = Some(sol.report.iterations);
            row.guaranteed_error = Some(sol.report.guaranteed_error);
            if spec.has_top_slice() {
                let top = grid.top();
                let err = tri
                    .vertices()
                    .enumerate()
                    .map(|(i, x)| (sol.value.get(i, top) - spec.top_slice_value(x).unwrap()).abs())
                    .fold(0.0, f64::max);
                row.error_vs_analytic_slice = Some(err);
            }
            Ok(Solved {
                tri,
                grid,
                value: sol.value,
            })
        })();
        match attempt {
            Ok(s) => solved.push(Some(s)),
            Err(e) => {
                row.failure = Some(e.to_string());
                solved.push(None);
            }
        }
        rows.push(row);
    }

    if reference == ReferenceMode::FinestGrid {
        if let Some(ref_idx) = solved.iter().rposition(|s| s.is_some()) {
            let reference = solved[ref_idx].as_ref().unwrap();
            // Intersection of the inner boxes: the inner box of the coarsest
            // successful mesh.
            let coarsest = solved.iter().flatten().next().unwrap();
            let common = coarsest.tri.inner().clone();
            for (row, s) in rows.iter_mut().zip(&solved) {
                let Some(s) = s else { continue };
                let mut err: f64 = 0.0;
                for level in 0..s.grid.num_levels() {
                    let Ok(ref_level) = reference.grid.index_of(s.grid.level(level)) else {
                        continue;
                    };
                    for (i, x) in s.tri.vertices().enumerate() {
                        if !common.contains(x) {
                            continue;
                        }
                        let r = reference.value.evaluate(&reference.tri, x, ref_level)?;
                        err = err.max((s.value.get(i, level) - r).abs());
                    }
                }
                row.error_vs_reference = Some(err);
            }
        }
    }

    let points = |f: fn(&SweepRow) -> Option<f64>| -> Vec<(f64, f64)> {
        rows.iter().filter_map(|r| f(r).map(|e| (r.k, e))).collect()
    };
    let rate_vs_reference = fit_rate(&points(|r| r.error_vs_reference)).ok();
    let rate_vs_analytic = fit_rate(&points(|r| r.error_vs_analytic_slice)).ok();
    Ok(SweepResult {
        rows,
        rate_vs_reference,
        rate_vs_analytic,
    })
}

/// Least-squares slope of `log(error)` against `log(k)` over the points with
/// positive, finite values.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(k, e)| k.is_finite() && e.is_finite() && *k > 0.0 && *e > 0.0)
        .map(|(k, e)| (k.ln(), e.ln()))
        .collect();
    if logs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "rate fit needs at least 2 positive errors, got {}",
            logs.len()
        )));
    }
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData(
            "rate fit needs at least 2 distinct mesh sizes".into(),
        ));
    }
    let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

fn binomial(n: u128, r: u128) -> u128 {
    let r = r.min(n - r);
    (0..r).fold(1u128, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Barycentric weights by trying every simplex; independent of the cell
/// arithmetic used by [`Triangulation::locate`].
fn locate_exhaustive(tri: &Triangulation, p: &[f64]) -> Option<Vec<(usize, f64)>> {
    let d = tri.dim();
    for s in tri.simplices() {
        // Solve [v_0 .. v_d; 1 .. 1] w = [p; 1].
        let mut m: Vec<Vec<f64>> = (0..=d)
            .map(|row| {
                let mut r: Vec<f64> = s
                    .iter()
                    .map(|&v| if row < d { tri.vertex(v)[row] } else { 1.0 })
                    .collect();
                r.push(if row < d { p[row] } else { 1.0 });
                r
            })
            .collect();
        let Some(w) = gauss_solve(&mut m) else {
            continue;
        };
        if w.iter().all(|x| *x >= -1e-12) {
            return Some(s.iter().copied().zip(w).collect());
        }
    }
    None
}

#[allow(clippy::needless_range_loop)]
fn gauss_solve(m: &mut [Vec<f64>]) -> Option<Vec<f64>> {
    let n = m.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        for row in 0..n {
            if row != col {
                let f = m[row][col] / m[col][col];
                for c in col..=n {
                    m[row][c] -= f * m[col][c];
                }
            }
        }
    }
    Some((0..n).map(|i| m[i][n] / m[i][i]).collect())
}

struct Oracle<'a> {
    spec: &'a ProblemSpec,
    tri: &'a Triangulation,
    grid: &'a ControlGrid,
    h: f64,
    beta: f64,
}

impl Oracle<'_> {
    /// Minimal discounted cost over all monotone control choices along every
    /// branch of the interpolation tree rooted at `node`.
    fn search(&self, node: usize, a: usize, remaining: usize) -> Result<f64> {
        if remaining == 0 {
            return Ok(0.0);
        }
        let x = self.tri.vertex(node);
        let level = self.grid.level(a);
        let g = self.spec.dynamics(x, level);
        let image: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi + self.h * gi).collect();
        let branches = locate_exhaustive(self.tri, &image).ok_or_else(|| {
            let axis = self.tri.outside_axis(&image).unwrap_or(0);
            Error::ImageOutOfDomain {
                node,
                level: a,
                axis,
                coordinate: image[axis],
            }
        })?;
        let mut best = f64::INFINITY;
        for b in a..=self.grid.top() {
            let mut expected = 0.0;
            for &(v, w) in &branches {
                if w.abs() > 1e-14 {
                    expected += w * self.search(v, b, remaining - 1)?;
                }
            }
            best = best.min(expected);
        }
        Ok(self.beta * best + self.h * self.spec.cost(x, level))
    }
}

/// Solves the `mu`-step finite-horizon problem by exhaustive search over
/// monotone control sequences, branching at every step over the vertices of
/// the simplex containing the image point with their barycentric weights.
/// No values are cached, so the cost is exponential in `mu`; instances
/// beyond the enumeration budget are refused.
pub fn brute_force_oracle(
    spec: &ProblemSpec,
    tri: &Triangulation,
    grid: &ControlGrid,
    h: f64,
    mu: usize,
) -> Result<GridFunction> {
    let m = grid.intervals() as u128;
    let sequences = binomial(mu as u128 + m, m);
    if sequences > ORACLE_SEQUENCE_LIMIT {
        return Err(Error::BudgetExceeded {
            what: "monotone control sequences",
            count: sequences,
            limit: ORACLE_SEQUENCE_LIMIT,
        });
    }
    let branching = (m + 1) * (tri.dim() as u128 + 1);
    let tree = (0..mu).fold(1u128, |acc, _| acc.saturating_mul(branching));
    if tree > ORACLE_TREE_LIMIT {
        return Err(Error::BudgetExceeded {
            what: "scenario tree size",
            count: tree,
            limit: ORACLE_TREE_LIMIT,
        });
    }
    crate::bellman::check_step(spec, grid, h)?;
    let oracle = Oracle {
        spec,
        tri,
        grid,
        h,
        beta: 1.0 - spec.discount() * h,
    };
    let mut out = GridFunction::zeros_on(tri, grid);
    for node in 0..tri.num_vertices() {
        for a in 0..grid.num_levels() {
            out.set(node, a, oracle.search(node, a, mu)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bellman::ImageMode;
    use crate::fespace::control_grid;
    use crate::problem::{builtin, BuiltinProblemId};
    use crate::solver::solve_finite_horizon;

    fn params(gamma: f64, h: f64, k: f64) -> BoundParams {
        BoundParams {
            gamma,
            lip_g: 1.0,
            discount: 2.0,
            bound_f: 1.0,
            horizon: 1.0,
            h,
            k,
        }
    }

    #[test]
    fn envelope_examples() {
        assert!((theoretical_envelope(&params(1.0, 0.01, 0.001)).unwrap() - 0.02).abs() < 1e-15);
        let spec = builtin(BuiltinProblemId::PaperExample2d);
        let p = BoundParams::from_spec(&spec, 4.0, 0.04, 0.04).unwrap();
        assert_eq!(p.gamma, 0.5);
        assert!((theoretical_envelope(&p).unwrap() - 0.24f64.sqrt()).abs() < 1e-15);
        assert!((theoretical_envelope(&params(0.5, 0.04, 0.0)).unwrap() - 0.2).abs() < 1e-15);
        assert!(theoretical_envelope(&params(0.5, 0.0, 0.1)).is_err());
        assert!(BoundParams::from_constants(1.0, 1.0, 1.0, None, 1.0, 0.1, 0.1).is_err());
        let p = BoundParams::from_constants(1.0, 1.0, 1.0, Some(0.25), 1.0, 0.1, 0.1).unwrap();
        assert_eq!(p.gamma, 0.25);
    }

    #[test]
    fn growth_factors() {
        for t in [0.0, 1.0, 7.5] {
            assert_eq!(phi_t(0.5, 1.0, t), 1.0);
        }
        let spec = builtin(BuiltinProblemId::PaperExample2d);
        assert!((phi_t_for(&spec, 4.0) - 4f64.exp()).abs() < 1e-12);
        assert_eq!(phi_t(1.0, 1.0, 3.0), 3.0);
        assert_eq!(tail_bound(1.75, 1.0, 0.0), 1.75);
        assert!((tail_bound_for(&spec, 4.0) - 1.75 * (-4f64).exp()).abs() < 1e-15);
        // phi(n): e^{(L-l)T + l n h}, T e^{L n h}, e^{L n h}
        assert!((phi_n(2.0, 1.0, 10, 0.1, 4.0) - 5f64.exp()).abs() < 1e-12);
        assert!((phi_n(1.0, 1.0, 10, 0.1, 4.0) - 4.0 * 1f64.exp()).abs() < 1e-12);
        assert!((phi_n(0.5, 1.0, 10, 0.1, 4.0) - 0.5f64.exp()).abs() < 1e-12);
        assert!((phi_n_for(&spec, 0, 0.1, 4.0) - 4f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn coupling_steps() {
        assert_eq!(Coupling::Equal.step_for(0.1).unwrap(), 0.1);
        let h = Coupling::TwoThirds { c: 1.0 }.step_for(0.008).unwrap();
        assert!((h - 0.04).abs() < 1e-15);
        assert!(Coupling::TwoThirds { c: 0.0 }.step_for(0.1).is_err());
    }

    #[test]
    fn rate_fits() {
        let ks = [0.5, 0.2, 0.1, 0.05];
        let sq: Vec<_> = ks.iter().map(|k| (*k, k * k)).collect();
        assert!((fit_rate(&sq).unwrap() - 2.0).abs() < 1e-10);
        let half: Vec<_> = ks.iter().map(|k| (*k, 3.0 * k.sqrt())).collect();
        assert!((fit_rate(&half).unwrap() - 0.5).abs() < 1e-10);
        let flat: Vec<_> = ks.iter().map(|k| (*k, 0.7)).collect();
        assert!(fit_rate(&flat).unwrap().abs() < 1e-12);
        assert!(fit_rate(&[(0.1, 1.0)]).is_err());
        assert!(fit_rate(&[(0.1, 1.0), (0.2, 0.0)]).is_err());
    }

    #[test]
    fn single_row_sweep_is_self_referenced() {
        let spec = builtin(BuiltinProblemId::PaperExample2d);
        let res = run_sweep(
            &spec,
            &[0.2],
            Coupling::Equal,
            ReferenceMode::FinestGrid,
            &SolveOptions::new(0.2),
        )
        .unwrap();
        assert_eq!(res.rows.len(), 1);
        assert_eq!(res.rows[0].error_vs_reference, Some(0.0));
        assert!(res.rate_vs_reference.is_none());
    }

    #[test]
    fn failing_rows_do_not_stop_the_sweep() {
        let spec = builtin(BuiltinProblemId::PaperExample2d);
        let res = run_sweep(
            &spec,
            &[0.3, 0.5, 0.25],
            Coupling::Equal,
            ReferenceMode::FinestGrid,
            &SolveOptions::new(0.5),
        )
        .unwrap();
        assert_eq!(
            res.rows.iter().map(|r| r.k).collect::<Vec<_>>(),
            vec![0.5, 0.3, 0.25]
        );
        assert!(res.rows[1].failure.is_some());
        assert!(res.rows[0].failure.is_none() && res.rows[2].failure.is_none());
        assert!(res.rows[0].error_vs_reference.unwrap() > 0.0);
        let mut buf = Vec::new();
        res.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,h,coupling,iterations,error_ref,error_analytic,envelope\n"));
        assert!(text.lines().last().unwrap().starts_with("rate,"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn oracle_small_horizons() {
        let spec = builtin(BuiltinProblemId::PaperExample2d);
        let tri = build_uniform(spec.domain(), 0.5).unwrap();
        let grid = control_grid(0.5).unwrap();
        let zero = brute_force_oracle(&spec, &tri, &grid, 0.5, 0).unwrap();
        assert_eq!(zero.sup_norm(), 0.0);
        let one = brute_force_oracle(&spec, &tri, &grid, 0.5, 1).unwrap();
        let fh = solve_finite_horizon(&spec, &tri, &grid, 0.5, 1, ImageMode::Strict).unwrap();
        assert_eq!(one, fh);
    }

    #[test]
    fn oracle_budget() {
        let spec = builtin(BuiltinProblemId::PaperExample2d);
        let tri = build_uniform(spec.domain(), 0.1).unwrap();
        let grid = control_grid(0.1).unwrap();
        assert!(matches!(
            brute_force_oracle(&spec, &tri, &grid, 0.1, 40),
            Err(Error::BudgetExceeded { .. })
        ));
        assert_eq!(binomial(6, 2), 15);
        assert_eq!(binomial(7, 2), 21);
    }

    #[test]
    fn exhaustive_location_agrees_with_cell_arithmetic() {
        let spec = builtin(BuiltinProblemId::PaperExample2d);
        let tri = build_uniform(spec.domain(), 0.25).unwrap();
        for p in [[0.1, 0.3], [-0.5, 0.2], [0.49, -0.01], [0.0, 0.0]] {
            let fast = tri.locate(&p).unwrap();
            let slow = locate_exhaustive(&tri, &p).unwrap();
            for (v, w) in slow {
                let fw = fast
                    .vertices
                    .iter()
                    .position(|x| *x == v)
                    .map_or(0.0, |i| fast.weights[i]);
                assert!((fw - w).abs() < 1e-12);
            }
        }
    }
}
