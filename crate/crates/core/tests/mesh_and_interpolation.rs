use monohjb::{build_uniform, check_hypotheses, control_grid, BoxDomain, GridFunction};
use proptest::prelude::*;

proptest! {
    #[test]
    fn barycentric_weights_reproduce_the_point(x in -0.9f64..0.9, y in -0.9f64..0.9) {
        let tri = build_uniform(&BoxDomain::cube(2, -1.0, 1.0).unwrap(), 0.1).unwrap();
        let bc = tri.locate(&[x, y]).unwrap();
        let sum: f64 = bc.weights.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(bc.weights.iter().all(|w| *w >= 0.0));
        for axis in 0..2 {
            let p: f64 = bc.vertices.iter().zip(&bc.weights).map(|(v, w)| w * tri.vertex(*v)[axis]).sum();
            prop_assert!((p - [x, y][axis]).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_functions_interpolate_exactly(x in -0.8f64..0.8, y in -0.8f64..0.8, z in -0.8f64..0.8) {
        let tri = build_uniform(&BoxDomain::cube(3, -1.0, 1.0).unwrap(), 0.2).unwrap();
        let grid = control_grid(0.5).unwrap();
        let f = GridFunction::from_fn(&tri, &grid, |p, a| 1.0 + 2.0 * p[0] - p[1] + 0.5 * p[2] + a);
        for level in 0..grid.num_levels() {
            let exact = 1.0 + 2.0 * x - y + 0.5 * z + grid.level(level);
            prop_assert!((f.evaluate(&tri, &[x, y, z], level).unwrap() - exact).abs() < 1e-12);
        }
    }
}

#[test]
fn builtin_mesh_meets_hypotheses_at_supported_steps() {
    let spec = monohjb::builtin(monohjb::BuiltinProblemId::PaperExample2d);
    for k in [0.5, 0.2, 0.1, 0.05] {
        let tri = build_uniform(spec.domain(), k).unwrap();
        let grid = control_grid(k).unwrap();
        let report = check_hypotheses(&tri, &spec, k, &grid, None);
        assert!(report.all_ok(), "k={k}: {report:?}");
    }
}
