use monohjb::harness::{
    brute_force_oracle, fit_rate, run_sweep, tail_bound_for, theoretical_envelope, BoundParams,
    Coupling, ReferenceMode, ENVELOPE_SLACK,
};
use monohjb::{
    build_uniform, builtin, control_grid, solve_finite_horizon, solve_picard, BuiltinProblemId,
    Error, ImageMode, SolveOptions,
};

#[test]
fn sweep_rows_stay_inside_the_envelope() {
    let spec = builtin(BuiltinProblemId::PaperExample2d);
    let result = run_sweep(
        &spec,
        &[0.1, 0.5, 0.2],
        Coupling::Equal,
        ReferenceMode::FinestGrid,
        &SolveOptions::new(0.1),
    )
    .unwrap();
    let ks: Vec<f64> = result.rows.iter().map(|r| r.k).collect();
    assert_eq!(ks, vec![0.5, 0.2, 0.1]);
    for row in &result.rows {
        assert!(row.failure.is_none());
        let err = row.error_vs_reference.unwrap();
        assert!(
            err <= ENVELOPE_SLACK * row.envelope,
            "k={} err={err}",
            row.k
        );
    }
    assert_eq!(result.rows[2].error_vs_reference, Some(0.0));
    let an: Vec<f64> = result
        .rows
        .iter()
        .map(|r| r.error_vs_analytic_slice.unwrap())
        .collect();
    assert!(an[0] > an[1] && an[1] > an[2], "{an:?}");
    assert!(result.rate_vs_analytic.unwrap() > 0.0);

    let mut csv = Vec::new();
    result.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("k,h,coupling,iterations,error_ref,error_analytic,envelope\n"));
    assert!(text.lines().last().unwrap().starts_with("rate,"));
}

#[test]
fn failing_rows_do_not_stop_the_sweep() {
    let spec = builtin(BuiltinProblemId::PaperExample2d);
    let opts = SolveOptions::new(0.1).with_max_iterations(3);
    let result = run_sweep(
        &spec,
        &[0.5, 0.1],
        Coupling::Equal,
        ReferenceMode::FinestGrid,
        &opts,
    )
    .unwrap();
    assert!(result.rows[0].failure.is_none());
    assert!(result.rows[1]
        .failure
        .as_deref()
        .unwrap()
        .contains("converge"));
    assert_eq!(result.rows[0].error_vs_reference, Some(0.0));
}

#[test]
fn finite_horizon_approaches_fixed_point_within_tail() {
    let spec = builtin(BuiltinProblemId::PaperExample2d);
    let tri = build_uniform(spec.domain(), 0.1).unwrap();
    let grid = control_grid(0.1).unwrap();
    let sol = solve_picard(&spec, &tri, &grid, &SolveOptions::new(0.1)).unwrap();
    let u = solve_finite_horizon(&spec, &tri, &grid, 0.1, 40, ImageMode::Strict).unwrap();
    let gap = u.sup_norm_diff(&sol.value).unwrap();
    assert!(gap <= tail_bound_for(&spec, 4.0) + sol.report.guaranteed_error);
}

#[test]
fn oracle_matches_dynamic_programming() {
    let spec = builtin(BuiltinProblemId::PaperExample2d);
    let tri = build_uniform(spec.domain(), 0.5).unwrap();
    let grid = control_grid(0.5).unwrap();
    for mu in 0..=4 {
        let dp = solve_finite_horizon(&spec, &tri, &grid, 0.5, mu, ImageMode::Strict).unwrap();
        let bf = brute_force_oracle(&spec, &tri, &grid, 0.5, mu).unwrap();
        assert!(dp.sup_norm_diff(&bf).unwrap() <= 1e-10, "mu={mu}");
    }
    let spec = builtin(BuiltinProblemId::Contraction1d);
    let tri = build_uniform(spec.domain(), 1.0 / 3.0).unwrap();
    let grid = control_grid(0.5).unwrap();
    let dp = solve_finite_horizon(&spec, &tri, &grid, 0.5, 5, ImageMode::Strict).unwrap();
    let bf = brute_force_oracle(&spec, &tri, &grid, 0.5, 5).unwrap();
    assert!(dp.sup_norm_diff(&bf).unwrap() <= 1e-10);
}

#[test]
fn oracle_refuses_large_instances() {
    let spec = builtin(BuiltinProblemId::PaperExample2d);
    let tri = build_uniform(spec.domain(), 0.1).unwrap();
    let grid = control_grid(0.1).unwrap();
    assert!(matches!(
        brute_force_oracle(&spec, &tri, &grid, 0.1, 30),
        Err(Error::BudgetExceeded { .. })
    ));
}

#[test]
fn envelope_and_rate_shapes() {
    let spec = builtin(BuiltinProblemId::PaperExample2d);
    let p = BoundParams::from_spec(&spec, 4.0, 0.04, 0.04).unwrap();
    assert!((theoretical_envelope(&p).unwrap() - 0.24f64.sqrt()).abs() < 1e-15);
    let pts: Vec<(f64, f64)> = [0.4f64, 0.2, 0.1, 0.05]
        .iter()
        .map(|k| (*k, 3.0 * k.powf(0.5)))
        .collect();
    assert!((fit_rate(&pts).unwrap() - 0.5).abs() < 1e-10);
    assert!(fit_rate(&pts[..1]).is_err());
}
