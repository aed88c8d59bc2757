//! Control problem data: dynamics, running cost, discount, domain and the
//! Lipschitz/boundedness constants the error bounds are stated in.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// State velocity `g(x, a)`.
pub type Dynamics = Arc<dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync>;
/// Running cost `f(x, a)`.
pub type RunningCost = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
/// Closed form of the value function on the top control level `a = 1`,
/// as a function of the state and the discount rate.
pub type TopSlice = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// Relative slack allowed between sampled and declared constants.
pub const CONSTANT_SLACK: f64 = 1e-6;

/// Axis-aligned open box `(lower, upper)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} upper coordinates", lower.len()),
                found: format!("{}", upper.len()),
            });
        }
        for (axis, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!(
                    "box axis {axis}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The cube `(lo, hi)^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    /// Closed-box membership.
    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| *lo <= *x && *x <= *hi)
    }
}

/// Declared constants of the Lipschitz and boundedness hypotheses:
/// `|g(x,a) - g(y,b)| <= lip_g (|x-y| + |a-b|)`, `|g| <= bound_g`, and the
/// same for `f`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProblemConstants {
    pub lip_g: f64,
    pub bound_g: f64,
    pub lip_f: f64,
    pub bound_f: f64,
}

impl ProblemConstants {
    fn validate(&self) -> Result<()> {
        let all = [
            ("lip_g", self.lip_g),
            ("bound_g", self.bound_g),
            ("lip_f", self.lip_f),
            ("bound_f", self.bound_f),
        ];
        for (name, value) in all {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be finite and >= 0, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// An infinite-horizon discounted control problem with monotone controls in `[0, 1]`.
///
/// Immutable once built; every evaluation is a pure function call, so a spec
/// can be shared freely between worker threads.
#[derive(Clone)]
pub struct ProblemSpec {
    name: String,
    dynamics: Dynamics,
    cost: RunningCost,
    discount: f64,
    domain: BoxDomain,
    constants: ProblemConstants,
    gamma_override: Option<f64>,
    top_slice: Option<TopSlice>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("discount", &self.discount)
            .field("domain", &self.domain)
            .field("constants", &self.constants)
            .field("gamma_override", &self.gamma_override)
            .field("top_slice", &self.top_slice.is_some())
            .finish()
    }
}

impl ProblemSpec {
    pub fn new(
        name: impl Into<String>,
        domain: BoxDomain,
        discount: f64,
        dynamics: Dynamics,
        cost: RunningCost,
        constants: ProblemConstants,
    ) -> Result<Self> {
        check_discount(discount)?;
        constants.validate()?;
        Ok(Self {
            name: name.into(),
            dynamics,
            cost,
            discount,
            domain,
            constants,
            gamma_override: None,
            top_slice: None,
        })
    }

    pub fn with_discount(mut self, discount: f64) -> Result<Self> {
        check_discount(discount)?;
        self.discount = discount;
        Ok(self)
    }

    pub fn with_constants(mut self, constants: ProblemConstants) -> Result<Self> {
        constants.validate()?;
        self.constants = constants;
        Ok(self)
    }

    /// Hölder exponent to use when the discount equals `lip_g`.
    pub fn with_gamma_override(mut self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Config(format!(
                "gamma_override must lie in (0, 1), got {gamma}"
            )));
        }
        self.gamma_override = Some(gamma);
        Ok(self)
    }

    pub fn with_top_slice(mut self, slice: TopSlice) -> Self {
        self.top_slice = Some(slice);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn constants(&self) -> ProblemConstants {
        self.constants
    }

    pub fn gamma_override(&self) -> Option<f64> {
        self.gamma_override
    }

    pub fn dynamics(&self, x: &[f64], a: f64) -> Vec<f64> {
        (self.dynamics)(x, a)
    }

    pub fn cost(&self, x: &[f64], a: f64) -> f64 {
        (self.cost)(x, a)
    }

    /// Exact value `u(x, 1)` when the problem provides one.
    pub fn top_slice_value(&self, x: &[f64]) -> Option<f64> {
        self.top_slice.as_ref().map(|s| s(x, self.discount))
    }

    pub fn has_top_slice(&self) -> bool {
        self.top_slice.is_some()
    }
}

fn check_discount(discount: f64) -> Result<()> {
    if discount.is_finite() && discount > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "discount must be finite and > 0, got {discount}"
        )))
    }
}

/// Names of the problems shipped with the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BuiltinProblemId {
    /// `g(x,a) = -(a+1) x`, `f(x,a) = a (1/4 - |x|^2)` on `(-1,1)^2`, discount 1.
    PaperExample2d,
    /// Same dynamics and domain as [`BuiltinProblemId::PaperExample2d`], `f = 0`.
    ZeroCost2d,
    /// `g(x,a) = -(a+1) x`, `f(x,a) = a (1/4 - x^2) + x/4` on `(-1,1)`, discount 1.
    Contraction1d,
}

impl BuiltinProblemId {
    pub const ALL: [BuiltinProblemId; 3] = [
        BuiltinProblemId::PaperExample2d,
        BuiltinProblemId::ZeroCost2d,
        BuiltinProblemId::Contraction1d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BuiltinProblemId::PaperExample2d => "paper_example_2d",
            BuiltinProblemId::ZeroCost2d => "zero_cost_2d",
            BuiltinProblemId::Contraction1d => "contraction_1d",
        }
    }

    pub(crate) fn known_names() -> String {
        Self::ALL
            .iter()
            .map(|id| id.name())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl fmt::Display for BuiltinProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BuiltinProblemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::UnknownProblem(s.to_string()))
    }
}

fn contracting_dynamics() -> Dynamics {
    Arc::new(|x: &[f64], a: f64| x.iter().map(|xi| -(a + 1.0) * xi).collect())
}

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Smallest and largest `|x|^2` over a closed box.
fn radius_sq_range(domain: &BoxDomain) -> (f64, f64) {
    let mut min = 0.0;
    let mut max = 0.0;
    for (lo, hi) in domain.lower().iter().zip(domain.upper()) {
        let (l2, h2) = (lo * lo, hi * hi);
        max += l2.max(h2);
        if !(*lo <= 0.0 && 0.0 <= *hi) {
            min += l2.min(h2);
        }
    }
    (min, max)
}

/// Builds a registered problem with its declared constants.
pub fn builtin(id: BuiltinProblemId) -> ProblemSpec {
    match id {
        BuiltinProblemId::PaperExample2d | BuiltinProblemId::ZeroCost2d => {
            let domain = BoxDomain::cube(2, -1.0, 1.0).expect("static box");
            let (r2_min, r2_max) = radius_sq_range(&domain);
            let r_max = r2_max.sqrt();
            let (cost, top, lip_f, bound_f): (RunningCost, TopSlice, f64, f64) = if id
                == BuiltinProblemId::PaperExample2d
            {
                // |d_x f| <= 2|x|, |d_a f| <= |1/4 - |x|^2|
                let bound_f = (0.25 - r2_min).abs().max((r2_max - 0.25).abs());
                (
                    Arc::new(|x: &[f64], a: f64| a * (0.25 - norm_sq(x))),
                    Arc::new(|x: &[f64], lambda: f64| 0.25 / lambda - norm_sq(x) / (lambda + 4.0)),
                    (2.0 * r_max).max(bound_f),
                    bound_f,
                )
            } else {
                (
                    Arc::new(|_: &[f64], _: f64| 0.0),
                    Arc::new(|_: &[f64], _: f64| 0.0),
                    0.0,
                    0.0,
                )
            };
            let constants = ProblemConstants {
                lip_g: 2.0,
                bound_g: 2.0 * r_max,
                lip_f,
                bound_f,
            };
            ProblemSpec::new(
                id.name(),
                domain,
                1.0,
                contracting_dynamics(),
                cost,
                constants,
            )
            .expect("builtin constants are valid")
            .with_top_slice(top)
        }
        BuiltinProblemId::Contraction1d => {
            let domain = BoxDomain::cube(1, -1.0, 1.0).expect("static box");
            let constants = ProblemConstants {
                lip_g: 2.0,
                bound_g: 2.0,
                lip_f: 2.25,
                bound_f: 1.0,
            };
            ProblemSpec::new(
                id.name(),
                domain,
                1.0,
                contracting_dynamics(),
                Arc::new(|x: &[f64], a: f64| a * (0.25 - x[0] * x[0]) + 0.25 * x[0]),
                constants,
            )
            .expect("builtin constants are valid")
            .with_top_slice(Arc::new(|x: &[f64], lambda: f64| {
                0.25 / lambda - x[0] * x[0] / (lambda + 4.0) + 0.25 * x[0] / (lambda + 2.0)
            }))
        }
    }
}

/// Hölder exponent of the value function: 1 when the discount dominates
/// `lip_g`, `discount / lip_g` when it is dominated, and the configured
/// override in the borderline case.
pub fn holder_exponent(spec: &ProblemSpec) -> Result<f64> {
    gamma_for(
        spec.discount(),
        spec.constants().lip_g,
        spec.gamma_override(),
    )
}

pub(crate) fn gamma_for(discount: f64, lip_g: f64, gamma_override: Option<f64>) -> Result<f64> {
    if discount > lip_g {
        Ok(1.0)
    } else if discount < lip_g {
        Ok(discount / lip_g)
    } else {
        gamma_override.ok_or_else(|| {
            Error::Config(format!(
                "discount equals lip_g ({discount}); a gamma_override in (0,1) is required"
            ))
        })
    }
}

/// One declared constant that the sampled estimate exceeds.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantViolation {
    pub name: &'static str,
    pub declared: f64,
    pub estimated: f64,
}

/// Sampled lower estimates of the problem constants.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantEstimate {
    pub samples: usize,
    pub lip_g: f64,
    pub bound_g: f64,
    pub lip_f: f64,
    pub bound_f: f64,
    pub violations: Vec<ConstantViolation>,
}

impl ConstantEstimate {
    pub fn is_consistent(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Samples `samples` random pairs in the closed domain times `[0, 1]` and
/// records the largest difference quotients and magnitudes of `g` and `f`.
///
/// The sample sequence depends only on `seed`, so a larger sample count
/// always extends a smaller one.
pub fn estimate_constants(spec: &ProblemSpec, samples: usize, seed: u64) -> ConstantEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domain = spec.domain();
    let draw = |rng: &mut ChaCha8Rng| -> (Vec<f64>, f64) {
        let x = domain
            .lower()
            .iter()
            .zip(domain.upper())
            .map(|(lo, hi)| rng.gen_range(*lo..=*hi))
            .collect();
        (x, rng.gen_range(0.0..=1.0))
    };

    let mut est = ConstantEstimate {
        samples,
        lip_g: 0.0,
        bound_g: 0.0,
        lip_f: 0.0,
        bound_f: 0.0,
        violations: Vec::new(),
    };
    for _ in 0..samples {
        let (x, a) = draw(&mut rng);
        let (y, b) = draw(&mut rng);
        let (gx, gy) = (spec.dynamics(&x, a), spec.dynamics(&y, b));
        let (fx, fy) = (spec.cost(&x, a), spec.cost(&y, b));

        est.bound_g = est
            .bound_g
            .max(norm_sq(&gx).sqrt())
            .max(norm_sq(&gy).sqrt());
        est.bound_f = est.bound_f.max(fx.abs()).max(fy.abs());

        let dist = x
            .iter()
            .zip(&y)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt()
            + (a - b).abs();
        if dist > 0.0 {
            let dg = gx
                .iter()
                .zip(&gy)
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt();
            est.lip_g = est.lip_g.max(dg / dist);
            est.lip_f = est.lip_f.max((fx - fy).abs() / dist);
        }
    }

    let declared = spec.constants();
    for (name, d, e) in [
        ("lip_g", declared.lip_g, est.lip_g),
        ("bound_g", declared.bound_g, est.bound_g),
        ("lip_f", declared.lip_f, est.lip_f),
        ("bound_f", declared.bound_f, est.bound_f),
    ] {
        if e > d * (1.0 + CONSTANT_SLACK) + f64::EPSILON {
            est.violations.push(ConstantViolation {
                name,
                declared: d,
                estimated: e,
            });
        }
    }
    est
}
