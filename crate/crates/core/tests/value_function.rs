use expansive::hj::{hj_residual, infinite_horizon_value, value_function, GradientSource, HjConfig};
use expansive::{CcOptions, Configuration, Error, MassSystem, ReferenceMotion, SolveConfig, TimeGrid};

fn cfg(rows: &[[f64; 2]]) -> Configuration {
    Configuration::from_rows(rows).unwrap()
}

fn two_body() -> ReferenceMotion {
    let sys = MassSystem::equal(2, 2).unwrap();
    ReferenceMotion::hyperbolic(&sys, &cfg(&[[1.0, 0.0], [-1.0, 0.0]]), None, 1e-9).unwrap()
}

#[test]
fn starting_on_the_reference_bounds_v_by_the_linear_term() {
    // φ = 0 is admissible with zero truncated action, and x = at is not a
    // solution, so the minimum is strictly negative
    let r = two_body();
    let grid = TimeGrid::power_law(1e3, 256).unwrap();
    let s = value_function(&r, &r.a, 1e3, &grid, &SolveConfig::default()).unwrap();
    let linear = r.system.mass_inner(&r.a, &r.a).unwrap();
    assert!(s.min_action < -1e-3);
    assert!((s.v_value - (s.min_action - linear)).abs() <= 1e-14);
    assert_eq!(s.gradient_source, GradientSource::Momentum);
    assert_eq!(s.momentum_mismatch, 0.0);
}

#[test]
fn homothetic_start_gives_the_linear_term_only() {
    let sys = MassSystem::equal(3, 2).unwrap();
    let r = ReferenceMotion::from_velocity(&sys, None, None, 1e-9, &CcOptions::default()).unwrap();
    let grid = TimeGrid::power_law(1e4, 256).unwrap();
    let mut last = f64::INFINITY;
    for t in [1e2, 1e3, 1e4] {
        let s = value_function(&r, &r.x0, t, &grid, &SolveConfig::default()).unwrap();
        let (_, r1, _) = r.eval(t);
        let expected = -sys.mass_inner(&r1, &r.x0).unwrap();
        assert!(s.min_action.abs() <= 1e-12, "{}", s.min_action);
        assert!((s.v_value - expected).abs() <= 1e-12);
        assert!(s.v_value.abs() < last);
        last = s.v_value.abs();
    }
}

#[test]
fn value_differences_shrink_with_t() {
    let r = two_body();
    let x0 = cfg(&[[1.2, 0.3], [-1.2, -0.3]]);
    let grid = TimeGrid::power_law(1.6e4, 768).unwrap();
    let v: Vec<f64> = [1e3, 2e3, 4e3, 8e3, 1.6e4]
        .iter()
        .map(|&t| value_function(&r, &x0, t, &grid, &SolveConfig::default()).unwrap().v_value)
        .collect();
    let diffs: Vec<f64> = v.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    assert!(diffs.windows(2).all(|w| w[1] < w[0]), "{diffs:?}");
}

#[test]
fn grid_refinement_changes_v_at_second_order() {
    let r = two_body();
    let x0 = cfg(&[[0.8, -0.4], [-0.8, 0.4]]);
    let v: Vec<f64> = [128, 256, 512]
        .iter()
        .map(|&n| {
            let grid = TimeGrid::power_law(1e3, n).unwrap();
            value_function(&r, &x0, 1e3, &grid, &SolveConfig::default()).unwrap().v_value
        })
        .collect();
    let ratio = (v[1] - v[0]) / (v[2] - v[1]);
    assert!((3.0..=5.0).contains(&ratio), "{v:?} ratio {ratio}");
}

#[test]
fn value_is_invariant_under_joint_rotation() {
    let (s, c) = 0.9f64.sin_cos();
    let q = [c, -s, s, c];
    let sys = MassSystem::equal(2, 2).unwrap();
    let a = cfg(&[[1.0, 0.0], [-1.0, 0.0]]);
    let x0 = cfg(&[[1.2, 0.3], [-1.2, -0.3]]);
    let r1 = ReferenceMotion::hyperbolic(&sys, &a, None, 1e-9).unwrap();
    let r2 = ReferenceMotion::hyperbolic(&sys, &a.rotated(&q), None, 1e-9).unwrap();
    let grid = TimeGrid::power_law(1e3, 256).unwrap();
    let v1 = value_function(&r1, &x0, 1e3, &grid, &SolveConfig::default()).unwrap();
    let v2 = value_function(&r2, &x0.rotated(&q), 1e3, &grid, &SolveConfig::default()).unwrap();
    assert!((v1.v_value - v2.v_value).abs() <= 1e-8);
}

#[test]
fn infinite_horizon_bookkeeping() {
    let r = two_body();
    let x0 = cfg(&[[0.5, 1.0], [-0.5, -1.0]]);
    let grid = TimeGrid::power_law(1e4, 512).unwrap();
    let (v, rep) = infinite_horizon_value(&r, &x0, &grid, &SolveConfig::default()).unwrap();
    let shifted = r.with_x0(&x0).unwrap();
    let linear = r.system.mass_inner(&r.a, &shifted.x0).unwrap();
    assert!((v + linear - rep.action.total).abs() <= 1e-9);
}

#[test]
fn difference_gradient_matches_momentum_in_a_mixed_problem() {
    let sys = MassSystem::equal(3, 2).unwrap();
    let a = cfg(&[[0.5, 0.0], [0.5, 0.0], [-1.0, 0.0]]);
    let r = ReferenceMotion::from_velocity(&sys, Some(&a), None, 1e-9, &CcOptions::default()).unwrap();
    let grid = TimeGrid::power_law(1e3, 384).unwrap();
    let hj = HjConfig::default();
    let s = hj_residual(&r, &r.x0, &grid, &SolveConfig::default(), &hj).unwrap();
    assert_eq!(s.gradient_source, GradientSource::FiniteDifference);
    assert!(s.momentum_mismatch <= 1e-3, "{}", s.momentum_mismatch);
    assert!(s.step_halving_change.unwrap() <= 0.1);
    // bounded by the finite-horizon defect, which decays slowly here
    assert!(s.hj_residual.is_finite());
}

#[test]
fn oversized_step_is_flagged_unstable() {
    let r = two_body();
    let grid = TimeGrid::power_law(1e3, 256).unwrap();
    let hj = HjConfig { fd_step: Some(0.9), stability_tol: 1e-4, ..HjConfig::default() };
    let e = hj_residual(&r, &cfg(&[[1.0, 0.0], [-1.0, 0.0]]), &grid, &SolveConfig::default(), &hj).unwrap_err();
    assert!(matches!(e, Error::UnstableGradient { .. } | Error::CollisionAtStart { .. }), "{e}");
}

#[test]
fn t_beyond_grid_is_rejected() {
    let r = two_body();
    let grid = TimeGrid::power_law(1e3, 64).unwrap();
    assert!(matches!(value_function(&r, &r.a, 2e3, &grid, &SolveConfig::default()), Err(Error::InvalidInput(_))));
}

#[test]
fn budget_exhaustion_is_not_converged() {
    let r = two_body();
    let grid = TimeGrid::power_law(1e3, 128).unwrap();
    let cfg_short = SolveConfig { max_iters: 1, ..SolveConfig::default() };
    let x0 = cfg(&[[1.2, 0.3], [-1.2, -0.3]]);
    assert!(matches!(value_function(&r, &x0, 1e3, &grid, &cfg_short), Err(Error::NotConverged(_))));
}
