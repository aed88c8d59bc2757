use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use monohjb::harness::{
    brute_force_oracle, phi_n_for, phi_t_for, run_sweep, tail_bound_for, theoretical_envelope,
    BoundParams, ENVELOPE_SLACK,
};
use monohjb::io::format_float;
use monohjb::policy::{cost_consistency, simulate};
use monohjb::{
    build_uniform, check_hypotheses, holder_exponent, solve, solve_finite_horizon, ControlGrid,
    Error, ProblemSpec, Solution, Triangulation,
};
use toml::{Table, Value};

use crate::config::RunConfig;
use crate::{CliError, Command};

/// Largest gap at which the recursion and the exhaustive search count as equal.
const ORACLE_TOLERANCE: f64 = 1e-10;

struct Outcome {
    exit_code: u8,
    result: Table,
}

impl Outcome {
    fn ok(result: Table) -> Self {
        Self {
            exit_code: 0,
            result,
        }
    }
}

pub fn execute(command: Command, cfg: &RunConfig, spec: &ProblemSpec) -> Result<u8, CliError> {
    let started = SystemTime::now();
    let clock = Instant::now();
    std::fs::create_dir_all(cfg.out_dir())
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", cfg.out_dir().display())))?;
    let outcome = match command {
        Command::Solve => cmd_solve(cfg, spec),
        Command::Simulate => cmd_simulate(cfg, spec),
        Command::Sweep => cmd_sweep(cfg, spec),
        Command::CheckMesh => cmd_check_mesh(cfg, spec),
        Command::OracleCheck => cmd_oracle_check(cfg, spec),
        Command::Bounds => cmd_bounds(cfg, spec),
    }?;

    let mut run = Table::new();
    run.insert("command".into(), command.name().into());
    run.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    run.insert("started_unix_s".into(), unix_seconds(started).into());
    run.insert(
        "finished_unix_s".into(),
        unix_seconds(SystemTime::now()).into(),
    );
    run.insert("wall_time_s".into(), clock.elapsed().as_secs_f64().into());
    run.insert("exit_code".into(), i64::from(outcome.exit_code).into());
    let mut report = Table::new();
    report.insert("run".into(), Value::Table(run));
    report.insert("result".into(), Value::Table(outcome.result));
    report.insert(
        "config".into(),
        Value::try_from(cfg)
            .map_err(|e| CliError::Config(format!("cannot serialise config: {e}")))?,
    );
    let text = toml::to_string(&report)
        .map_err(|e| CliError::Config(format!("cannot serialise report: {e}")))?;
    write_file(&cfg.out_dir().join("report.toml"), |w| {
        Ok(w.write_all(text.as_bytes())?)
    })?;
    Ok(outcome.exit_code)
}

fn unix_seconds(t: SystemTime) -> f64 {
    t.duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> monohjb::Result<()>,
) -> Result<(), CliError> {
    let io_err = |e: &dyn std::fmt::Display| CliError::Io(format!("{}: {e}", path.display()));
    let file = File::create(path).map_err(|e| io_err(&e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).map_err(|e| io_err(&e))?;
    w.flush().map_err(|e| io_err(&e))
}

fn discretize(
    cfg: &RunConfig,
    spec: &ProblemSpec,
    k: f64,
) -> Result<(Triangulation, ControlGrid), CliError> {
    let tri = build_uniform(spec.domain(), k)?;
    let grid = ControlGrid::new(cfg.h())?;
    Ok((tri, grid))
}

fn floats(values: &[f64]) -> Value {
    Value::Array(values.iter().map(|v| Value::Float(*v)).collect())
}

/// Runs the configured solver; a non-converged solve is returned together
/// with exit code 2 so its partial iterate can still be written.
fn solve_configured(
    cfg: &RunConfig,
    spec: &ProblemSpec,
    tri: &Triangulation,
    grid: &ControlGrid,
) -> Result<(Solution, u8), CliError> {
    let opts = cfg.solve_options(cfg.h())?;
    match solve(spec, tri, grid, &opts) {
        Ok(sol) => Ok((sol, 0)),
        Err(Error::NotConverged(partial)) => {
            eprintln!(
                "monohjb: no convergence after {} iterations (last residual {}); writing the last iterate",
                partial.report.iterations,
                format_float(partial.report.last_residual())
            );
            Ok((*partial, 2))
        }
        Err(e) => Err(e.into()),
    }
}

fn solve_summary(sol: &Solution, tri: &Triangulation, grid: &ControlGrid) -> Table {
    let r = &sol.report;
    let mut t = Table::new();
    t.insert("method".into(), r.method.name().into());
    t.insert("converged".into(), r.converged.into());
    t.insert("iterations".into(), (r.iterations as i64).into());
    t.insert(
        "evaluation_sweeps".into(),
        (r.evaluation_sweeps as i64).into(),
    );
    t.insert("last_residual".into(), r.last_residual().into());
    t.insert("guaranteed_error".into(), r.guaranteed_error.into());
    t.insert("contraction".into(), r.contraction.into());
    t.insert("nodes".into(), (tri.num_vertices() as i64).into());
    t.insert("levels".into(), (grid.num_levels() as i64).into());
    t.insert("residual_history".into(), floats(&r.residual_history));
    t
}

fn cmd_solve(cfg: &RunConfig, spec: &ProblemSpec) -> Result<Outcome, CliError> {
    let (tri, grid) = discretize(cfg, spec, cfg.discretization.k)?;
    let (sol, exit_code) = solve_configured(cfg, spec, &tri, &grid)?;
    let out = cfg.out_dir();
    write_file(&out.join("values.csv"), |w| {
        sol.value.write_csv(&tri, &grid, w)
    })?;
    write_file(&out.join("policy.csv"), |w| {
        sol.policy.write_csv(&tri, &grid, w)
    })?;
    println!(
        "{}: {} iterations, guaranteed error {}",
        sol.report.method,
        sol.report.iterations,
        format_float(sol.report.guaranteed_error)
    );
    Ok(Outcome {
        exit_code,
        result: solve_summary(&sol, &tri, &grid),
    })
}

fn cmd_simulate(cfg: &RunConfig, spec: &ProblemSpec) -> Result<Outcome, CliError> {
    let sim = cfg.simulate.as_ref().ok_or_else(|| {
        CliError::Config("simulate needs a [simulate] section with x0, a0, steps".into())
    })?;
    let (tri, grid) = discretize(cfg, spec, cfg.discretization.k)?;
    if sim.x0.len() != tri.dim() {
        return Err(CliError::Config(format!(
            "simulate.x0 has {} coordinates, the domain has {}",
            sim.x0.len(),
            tri.dim()
        )));
    }
    tri.locate(&sim.x0)?;
    let a0 = grid.index_of(sim.a0)?;
    let (sol, exit_code) = solve_configured(cfg, spec, &tri, &grid)?;
    if exit_code != 0 {
        return Err(CliError::Numerical(
            "the value function did not converge; nothing simulated".into(),
        ));
    }
    let traj = simulate(
        spec,
        &tri,
        &grid,
        &sol.value,
        &sim.x0,
        a0,
        cfg.h(),
        sim.steps,
    )?;
    write_file(&cfg.out_dir().join("trajectory.csv"), |w| {
        traj.write_csv(&grid, w)
    })?;
    let gap = cost_consistency(&sol.value, &tri, &traj)?;
    println!(
        "{} steps, discounted total {}, consistency gap {}",
        traj.steps(),
        format_float(traj.discounted_total),
        format_float(gap)
    );
    let mut t = Table::new();
    t.insert("steps".into(), (traj.steps() as i64).into());
    t.insert("discounted_total".into(), traj.discounted_total.into());
    t.insert("cost_consistency_gap".into(), gap.into());
    t.insert(
        "controls_nondecreasing".into(),
        traj.controls_nondecreasing().into(),
    );
    t.insert("final_state".into(), floats(traj.states.last().unwrap()));
    t.insert(
        "final_control".into(),
        grid.level(traj.final_control).into(),
    );
    t.insert(
        "solve".into(),
        Value::Table(solve_summary(&sol, &tri, &grid)),
    );
    Ok(Outcome::ok(t))
}

fn cmd_sweep(cfg: &RunConfig, spec: &ProblemSpec) -> Result<Outcome, CliError> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("sweep needs a [sweep] section with k_list".into()))?;
    let template = cfg.solve_options(cfg.h())?;
    let result = run_sweep(
        spec,
        &sweep.k_list,
        cfg.coupling(),
        cfg.reference(),
        &template,
    )?;
    write_file(&cfg.out_dir().join("sweep.csv"), |w| result.write_csv(w))?;

    let failures: Vec<Value> = result
        .rows
        .iter()
        .filter_map(|r| {
            r.failure
                .as_ref()
                .map(|f| Value::String(format!("k={}: {f}", r.k)))
        })
        .collect();
    let within_envelope = result.rows.iter().all(|r| {
        r.error_vs_reference
            .is_none_or(|e| e <= ENVELOPE_SLACK * r.envelope)
    });
    for f in &failures {
        eprintln!(
            "monohjb sweep: row failed: {}",
            f.as_str().unwrap_or_default()
        );
    }
    println!("{} rows, {} failed", result.rows.len(), failures.len());
    let mut t = Table::new();
    t.insert("rows".into(), (result.rows.len() as i64).into());
    t.insert("envelope_slack".into(), ENVELOPE_SLACK.into());
    t.insert("errors_within_envelope".into(), within_envelope.into());
    if let Some(p) = result.rate_vs_reference {
        t.insert("rate_vs_reference".into(), p.into());
    }
    if let Some(p) = result.rate_vs_analytic {
        t.insert("rate_vs_analytic".into(), p.into());
    }
    let exit_code = if failures.is_empty() { 0 } else { 2 };
    t.insert("failures".into(), Value::Array(failures));
    Ok(Outcome {
        exit_code,
        result: t,
    })
}

fn cmd_check_mesh(cfg: &RunConfig, spec: &ProblemSpec) -> Result<Outcome, CliError> {
    let (tri, grid) = discretize(cfg, spec, cfg.discretization.k)?;
    let compact = cfg.compact_box()?;
    let report = check_hypotheses(&tri, spec, cfg.h(), &grid, compact.as_ref());
    write_file(&cfg.out_dir().join("mesh.txt"), |w| tri.write_dump(w))?;

    let checks = [
        ("HIP1", report.hip1_ok),
        ("HIP2", report.hip2_ok),
        ("HIP4", report.hip4_ok),
        ("HIP5", report.hip5_ok),
    ];
    for (name, ok) in checks {
        println!("{name}: {}", if ok { "ok" } else { "FAILED" });
    }
    let mut t = Table::new();
    t.insert("vertices".into(), (tri.num_vertices() as i64).into());
    t.insert("simplices".into(), (tri.num_simplices() as i64).into());
    t.insert("spacing".into(), tri.spacing().into());
    t.insert("mesh_size".into(), report.mesh_size.into());
    t.insert("max_diameter".into(), report.max_diameter.into());
    t.insert("min_diameter".into(), report.min_diameter.into());
    t.insert("chi1".into(), report.chi1.into());
    t.insert("k_over_d_max".into(), report.k_over_d_max.into());
    t.insert("hip2_failures".into(), (report.hip2_failures as i64).into());
    if let Some((node, level)) = report.hip2_first_failure {
        t.insert(
            "hip2_first_failure".into(),
            Value::Array(vec![(node as i64).into(), (level as i64).into()]),
        );
    }
    if let Some(margin) = report.hip3_margin {
        t.insert("hip3_margin".into(), margin.into());
    }
    for (name, ok) in checks {
        t.insert(format!("{}_ok", name.to_lowercase()), ok.into());
    }
    let exit_code = if report.all_ok() {
        0
    } else {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
        eprintln!(
            "monohjb check-mesh: hypotheses not met: {}",
            failed.join(", ")
        );
        1
    };
    Ok(Outcome {
        exit_code,
        result: t,
    })
}

fn cmd_oracle_check(cfg: &RunConfig, spec: &ProblemSpec) -> Result<Outcome, CliError> {
    let mu = cfg
        .oracle
        .as_ref()
        .ok_or_else(|| CliError::Config("oracle-check needs an [oracle] section with mu".into()))?
        .mu;
    let (tri, grid) = discretize(cfg, spec, cfg.discretization.k)?;
    let recursion = solve_finite_horizon(spec, &tri, &grid, cfg.h(), mu, cfg.image_mode())?;
    let exhaustive = brute_force_oracle(spec, &tri, &grid, cfg.h(), mu)?;
    let gap = recursion.sup_norm_diff(&exhaustive)?;
    write_file(&cfg.out_dir().join("finite_horizon.csv"), |w| {
        recursion.write_csv(&tri, &grid, w)
    })?;
    let agree = gap <= ORACLE_TOLERANCE;
    println!(
        "mu = {mu}: max gap {} ({})",
        format_float(gap),
        if agree { "agree" } else { "MISMATCH" }
    );
    let mut t = Table::new();
    t.insert("mu".into(), (mu as i64).into());
    t.insert("max_gap".into(), gap.into());
    t.insert("tolerance".into(), ORACLE_TOLERANCE.into());
    t.insert("agree".into(), agree.into());
    if !agree {
        eprintln!(
            "monohjb oracle-check: gap {} exceeds {}",
            format_float(gap),
            format_float(ORACLE_TOLERANCE)
        );
    }
    Ok(Outcome {
        exit_code: if agree { 0 } else { 2 },
        result: t,
    })
}

fn cmd_bounds(cfg: &RunConfig, spec: &ProblemSpec) -> Result<Outcome, CliError> {
    let horizon = cfg
        .bounds
        .as_ref()
        .ok_or_else(|| CliError::Config("bounds needs a [bounds] section with horizon".into()))?
        .horizon;
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(CliError::Config(format!(
            "bounds.horizon must be finite and >= 0, got {horizon}"
        )));
    }
    let (h, k) = (cfg.h(), cfg.discretization.k);
    let gamma = holder_exponent(spec)?;
    let phi_t = phi_t_for(spec, horizon);
    let tail = tail_bound_for(spec, horizon);
    let steps = (horizon / h + 1e-9).floor() as usize;
    let phi_n = phi_n_for(spec, steps, h, horizon);
    let envelope = theoretical_envelope(&BoundParams::from_spec(spec, horizon, h, k)?)?;
    let lines = [
        ("gamma", gamma),
        ("phi_T", phi_t),
        ("phi_n", phi_n),
        ("tail_bound", tail),
        ("envelope", envelope),
    ];
    for (name, v) in lines {
        println!("{name} = {}", format_float(v));
    }
    let mut t = Table::new();
    t.insert("horizon".into(), horizon.into());
    t.insert("n".into(), (steps as i64).into());
    for (name, v) in lines {
        t.insert(name.into(), v.into());
    }
    Ok(Outcome::ok(t))
}
