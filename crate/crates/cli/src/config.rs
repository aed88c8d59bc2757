use std::path::{Path, PathBuf};

use monohjb::harness::{Coupling, ReferenceMode};
use monohjb::mesh::snap_spacing;
use monohjb::{
    builtin, BoxDomain, BuiltinProblemId, ImageMode, Method, ProblemSpec, SolveOptions, StopRule,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a run needs. Unknown keys are rejected at every level.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub problem: ProblemSection,
    #[serde(default)]
    pub discretization: DiscretizationSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check_mesh: Option<CheckMeshSection>,
}

/// A builtin problem, optionally with its discount or constants replaced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discount: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lip_g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lip_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_override: Option<f64>,
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self {
            id: BuiltinProblemId::PaperExample2d.name().to_string(),
            discount: None,
            lip_g: None,
            bound_g: None,
            lip_f: None,
            bound_f: None,
            gamma_override: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
    #[default]
    Equal,
    TwoThirds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationSection {
    pub k: f64,
    /// Time step; when absent it follows from `coupling`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default)]
    pub coupling: CouplingKind,
    #[serde(default = "one")]
    pub coupling_c: f64,
    /// Round `k` to the nearest spacing that divides the domain.
    #[serde(default)]
    pub snap_k: bool,
    /// Project images that leave the inner box back onto it instead of failing.
    #[serde(default)]
    pub clamp_images: bool,
}

fn one() -> f64 {
    1.0
}

impl Default for DiscretizationSection {
    fn default() -> Self {
        Self {
            k: 0.1,
            h: None,
            coupling: CouplingKind::Equal,
            coupling_c: 1.0,
            snap_k: false,
            clamp_images: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRuleKind {
    #[default]
    StepSquared,
    TargetBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "picard")]
    pub method: String,
    #[serde(default)]
    pub stop_rule: StopRuleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_bound: Option<f64>,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_tolerance: Option<f64>,
}

fn picard() -> String {
    Method::Picard.name().to_string()
}

fn default_max_iterations() -> usize {
    SolveOptions::new(1.0).max_iterations
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            method: picard(),
            stop_rule: StopRuleKind::StepSquared,
            target_bound: None,
            max_iterations: default_max_iterations(),
            eval_tolerance: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub x0: Vec<f64>,
    /// Initial control level; must lie on the control grid.
    pub a0: f64,
    pub steps: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    #[default]
    Finest,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub k_list: Vec<f64>,
    #[serde(default)]
    pub reference: ReferenceKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    pub mu: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub horizon: f64,
}

/// Optional compact set (a box) whose clearance from the mesh boundary is
/// reported.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckMeshSection {
    pub compact_lower: Vec<f64>,
    pub compact_upper: Vec<f64>,
}

impl RunConfig {
    /// Reads a config file. A run report is accepted too: its embedded
    /// `[config]` table is used.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
        if table.contains_key("run") {
            if let Some(toml::Value::Table(cfg)) = table.remove("config") {
                return cfg.try_into().map_err(|e: toml::de::Error| e.to_string());
            }
        }
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec, CliError> {
        let p = &self.problem;
        let id: BuiltinProblemId =
            p.id.parse()
                .map_err(|e: monohjb::Error| CliError::Config(e.to_string()))?;
        let mut spec = builtin(id);
        if let Some(discount) = p.discount {
            spec = spec.with_discount(discount)?;
        }
        let mut c = spec.constants();
        let overridden =
            p.lip_g.is_some() || p.bound_g.is_some() || p.lip_f.is_some() || p.bound_f.is_some();
        c.lip_g = p.lip_g.unwrap_or(c.lip_g);
        c.bound_g = p.bound_g.unwrap_or(c.bound_g);
        c.lip_f = p.lip_f.unwrap_or(c.lip_f);
        c.bound_f = p.bound_f.unwrap_or(c.bound_f);
        if overridden {
            spec = spec.with_constants(c)?;
        }
        if let Some(gamma) = p.gamma_override {
            spec = spec.with_gamma_override(gamma)?;
        }
        Ok(spec)
    }

    pub fn coupling(&self) -> Coupling {
        match self.discretization.coupling {
            CouplingKind::Equal => Coupling::Equal,
            CouplingKind::TwoThirds => Coupling::TwoThirds {
                c: self.discretization.coupling_c,
            },
        }
    }

    pub fn method(&self) -> Result<Method, CliError> {
        self.solver
            .method
            .parse()
            .map_err(|e: monohjb::Error| CliError::Config(e.to_string()))
    }

    pub fn image_mode(&self) -> ImageMode {
        if self.discretization.clamp_images {
            ImageMode::Clamp
        } else {
            ImageMode::Strict
        }
    }

    pub fn reference(&self) -> ReferenceMode {
        match self.sweep.as_ref().map(|s| s.reference).unwrap_or_default() {
            ReferenceKind::Finest => ReferenceMode::FinestGrid,
            ReferenceKind::None => ReferenceMode::None,
        }
    }

    /// Solver options for time step `h`.
    pub fn solve_options(&self, h: f64) -> Result<SolveOptions, CliError> {
        let stop_rule = match self.solver.stop_rule {
            StopRuleKind::StepSquared => StopRule::StepSquared,
            StopRuleKind::TargetBound => {
                StopRule::TargetBound(self.solver.target_bound.ok_or_else(|| {
                    CliError::Config(
                        "solver.stop_rule = \"target_bound\" needs solver.target_bound".into(),
                    )
                })?)
            }
        };
        let mut opts = SolveOptions::new(h)
            .with_method(self.method()?)
            .with_stop_rule(stop_rule)
            .with_max_iterations(self.solver.max_iterations);
        opts.eval_tolerance = self.solver.eval_tolerance;
        opts.image_mode = self.image_mode();
        Ok(opts)
    }

    /// Fills in every derived default (snapped `k`, `h`, worker count, output
    /// directory) so that the returned config reproduces the run on its own.
    pub fn resolve(mut self, spec: &ProblemSpec) -> Result<Self, CliError> {
        let d = &mut self.discretization;
        if d.snap_k {
            d.k = snap_spacing(spec.domain(), d.k)?;
            if let Some(sweep) = self.sweep.as_mut() {
                for k in &mut sweep.k_list {
                    *k = snap_spacing(spec.domain(), *k)?;
                }
            }
        }
        if !(d.k.is_finite() && d.k > 0.0) {
            return Err(CliError::Config(format!(
                "discretization.k must be finite and > 0, got {}",
                d.k
            )));
        }
        if d.h.is_none() {
            let coupling = self.coupling();
            let d = &mut self.discretization;
            d.h = Some(coupling.step_for(d.k)?);
        }
        if self.workers.is_none() {
            self.workers = Some(
                std::thread::available_parallelism()
                    .map(|n| n.get())
                    .unwrap_or(1),
            );
        }
        if self.workers == Some(0) {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        if self.out_dir.is_none() {
            self.out_dir = Some(PathBuf::from("out"));
        }
        self.method()?;
        Ok(self)
    }

    /// Time step of a resolved config.
    pub fn h(&self) -> f64 {
        self.discretization.h.expect("config is resolved")
    }

    pub fn out_dir(&self) -> &Path {
        self.out_dir.as_deref().expect("config is resolved")
    }

    pub fn compact_box(&self) -> Result<Option<BoxDomain>, CliError> {
        match &self.check_mesh {
            None => Ok(None),
            Some(c) => Ok(Some(BoxDomain::new(
                c.compact_lower.clone(),
                c.compact_upper.clone(),
            )?)),
        }
    }
}
