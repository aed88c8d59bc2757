use monohjb::policy::{cost_consistency, simulate};
use monohjb::{
    build_uniform, builtin, control_grid, solve, BuiltinProblemId, Method, SolveOptions, StopRule,
};

#[test]
fn builtin_iteration_count_at_tenth() {
    let spec = builtin(BuiltinProblemId::PaperExample2d);
    let tri = build_uniform(spec.domain(), 0.1).unwrap();
    let grid = control_grid(0.1).unwrap();
    let sol = solve(&spec, &tri, &grid, &SolveOptions::new(0.1)).unwrap();
    assert_eq!(tri.num_vertices(), 361);
    assert!(
        (5..=20).contains(&sol.report.iterations),
        "{}",
        sol.report.iterations
    );
    assert!(sol.report.last_residual() <= 0.01);
    // stop rule h^2 at lambda = 1 gives a guaranteed error of at most h
    assert!(sol.report.guaranteed_error <= 0.1 * (1.0 - 0.1) + 1e-15);
}

#[test]
fn howard_needs_fewer_outer_iterations() {
    let spec = builtin(BuiltinProblemId::PaperExample2d);
    let tri = build_uniform(spec.domain(), 0.1).unwrap();
    let grid = control_grid(0.1).unwrap();
    let tight = SolveOptions::new(0.1).with_stop_rule(StopRule::TargetBound(1e-8));
    let p = solve(&spec, &tri, &grid, &tight).unwrap();
    let h = solve(
        &spec,
        &tri,
        &grid,
        &tight.clone().with_method(Method::Howard),
    )
    .unwrap();
    assert!(h.report.iterations < p.report.iterations);
    assert!(p.value.sup_norm_diff(&h.value).unwrap() <= 2e-8);
    assert_eq!(p.policy, h.policy);
}

#[test]
fn greedy_path_is_consistent_with_the_value() {
    let spec = builtin(BuiltinProblemId::PaperExample2d);
    let tri = build_uniform(spec.domain(), 0.05).unwrap();
    let grid = control_grid(0.05).unwrap();
    let sol = solve(&spec, &tri, &grid, &SolveOptions::new(0.05)).unwrap();
    let traj = simulate(&spec, &tri, &grid, &sol.value, &[0.5, 0.5], 0, 0.05, 200).unwrap();
    assert!(traj.controls_nondecreasing());
    let gap = cost_consistency(&sol.value, &tri, &traj).unwrap();
    assert!(gap <= 0.1, "gap {gap}");
}

#[test]
fn top_control_contracts_exactly() {
    let spec = builtin(BuiltinProblemId::PaperExample2d);
    let tri = build_uniform(spec.domain(), 0.05).unwrap();
    let grid = control_grid(0.05).unwrap();
    let sol = solve(&spec, &tri, &grid, &SolveOptions::new(0.05)).unwrap();
    let traj = simulate(
        &spec,
        &tri,
        &grid,
        &sol.value,
        &[0.5, 0.5],
        grid.top(),
        0.05,
        300,
    )
    .unwrap();
    for w in traj.states.windows(2) {
        for (next, prev) in w[1].iter().zip(&w[0]) {
            assert_eq!(*next, prev + 0.05 * (-2.0 * prev));
        }
    }
    // closed-form value of holding a = 1 from (0.5, 0.5) is 1/4 - 0.5/5
    assert!((traj.discounted_total - 0.15).abs() <= 0.05);
}

#[test]
fn longer_simulation_changes_total_by_at_most_the_tail() {
    let spec = builtin(BuiltinProblemId::PaperExample2d);
    let tri = build_uniform(spec.domain(), 0.1).unwrap();
    let grid = control_grid(0.1).unwrap();
    let sol = solve(&spec, &tri, &grid, &SolveOptions::new(0.1)).unwrap();
    let short = simulate(&spec, &tri, &grid, &sol.value, &[-0.4, 0.6], 2, 0.1, 40).unwrap();
    let long = simulate(&spec, &tri, &grid, &sol.value, &[-0.4, 0.6], 2, 0.1, 80).unwrap();
    let tail = spec.constants().bound_f / spec.discount() * short.discount_factor.powi(40);
    assert!((long.discounted_total - short.discounted_total).abs() <= tail);
    assert_eq!(&long.controls[..40], &short.controls[..]);
}
