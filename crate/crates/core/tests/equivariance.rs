use expansive::central::find_minimal_cc;
use expansive::minimizer::trajectory;
use expansive::verify::{chazy_fit, growth_fit, remainder_fit};
use expansive::{solve, CcOptions, Configuration, MassSystem, ReferenceMotion, SolveConfig, SolveReport, TimeGrid};
use proptest::prelude::*;

fn rotation(theta: f64) -> [f64; 4] {
    let (s, c) = theta.sin_cos();
    [c, -s, s, c]
}

fn cfg(rows: &[[f64; 2]]) -> Configuration {
    Configuration::from_rows(rows).unwrap()
}

fn hyperbolic3(masses: &[f64], a: &Configuration, x0: &Configuration) -> ReferenceMotion {
    let sys = MassSystem::new(masses.to_vec(), 2).unwrap();
    ReferenceMotion::hyperbolic(&sys, a, Some(x0), 1e-9).unwrap()
}

fn solved(r: &ReferenceMotion, t: f64, n: usize) -> SolveReport {
    let rep = solve(r, &TimeGrid::power_law(t, n).unwrap(), &SolveConfig::default(), None).unwrap();
    assert!(rep.converged);
    rep
}

fn max_traj_gap(a: &[Configuration], b: &[Configuration]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.sub(y).max_abs() / (1.0 + y.max_abs())).fold(0.0, f64::max)
}

const A: [[f64; 2]; 3] = [[1.0, 0.2], [-0.4, 0.5], [0.3, -1.5]];
const X0: [[f64; 2]; 3] = [[0.3, 0.8], [-0.6, 0.1], [1.0, -2.0]];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn solve_commutes_with_rotation(theta in 0.0f64..std::f64::consts::TAU) {
        let m = [1.0, 2.0, 0.5];
        let (a, x0) = (cfg(&A), cfg(&X0));
        let q = rotation(theta);
        let r1 = hyperbolic3(&m, &a, &x0);
        let r2 = hyperbolic3(&m, &a.rotated(&q), &x0.rotated(&q));
        let (s1, s2) = (solved(&r1, 1e3, 128), solved(&r2, 1e3, 128));
        prop_assert!((s1.action.total - s2.action.total).abs() <= 1e-9 * (1.0 + s1.action.total.abs()));
        let t1: Vec<Configuration> = trajectory(&r1, &s1.path).iter().map(|x| x.rotated(&q)).collect();
        let g = max_traj_gap(&t1, &trajectory(&r2, &s2.path));
        prop_assert!(g <= 1e-7, "{}", g);
        // fitted exponents and residuals do not see the rotation, up to solver precision
        for pair in [(0, 1), (0, 2), (1, 2)] {
            let (f1, f2) = (growth_fit(&s1, &r1, pair, 0.1).unwrap(), growth_fit(&s2, &r2, pair, 0.1).unwrap());
            prop_assert!((f1.exponent.unwrap() - f2.exponent.unwrap()).abs() <= 1e-7);
            prop_assert!((f1.rms_residual - f2.rms_residual).abs() <= 1e-7);
        }
        let (c1, c2) = (chazy_fit(&s1, &r1, 0.1).unwrap(), chazy_fit(&s2, &r2, 0.1).unwrap());
        // the log fit reads a small remainder, so agreement is at solver precision
        prop_assert!((c1.best_rel_err - c2.best_rel_err).abs() <= 1e-5);
    }

    #[test]
    fn solve_commutes_with_permutation(k in 0usize..6) {
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let p = perms[k];
        let m = [1.0, 2.0, 0.5];
        let (a, x0) = (cfg(&A), cfg(&X0));
        let r1 = hyperbolic3(&m, &a, &x0);
        let mp: Vec<f64> = p.iter().map(|&i| m[i]).collect();
        let r2 = hyperbolic3(&mp, &a.permuted(&p), &x0.permuted(&p));
        let (s1, s2) = (solved(&r1, 1e3, 128), solved(&r2, 1e3, 128));
        prop_assert!((s1.action.total - s2.action.total).abs() <= 1e-9 * (1.0 + s1.action.total.abs()));
        let t1: Vec<Configuration> = trajectory(&r1, &s1.path).iter().map(|x| x.permuted(&p)).collect();
        let g = max_traj_gap(&t1, &trajectory(&r2, &s2.path));
        prop_assert!(g <= 1e-7, "{}", g);
    }
}

#[test]
fn parabolic_solution_rotates_with_its_central_configuration() {
    let sys = MassSystem::equal(3, 2).unwrap();
    let cc = find_minimal_cc(&sys, &CcOptions::default()).unwrap();
    let q = rotation(0.7);
    let mut ccr = cc.clone();
    ccr.b = cc.b.rotated(&q);
    let r1 = ReferenceMotion::parabolic(&sys, cc, None, 1e-9).unwrap();
    let x0 = r1.x0.add(&cfg(&[[0.1, 0.05], [-0.05, 0.1], [0.0, -0.1]]));
    let r1 = r1.with_x0(&x0).unwrap();
    let r2 = ReferenceMotion::parabolic(&sys, ccr, Some(&x0.rotated(&q)), 1e-9).unwrap();
    let (s1, s2) = (solved(&r1, 1e4, 256), solved(&r2, 1e4, 256));
    assert!((s1.action.total - s2.action.total).abs() <= 1e-9);
    let t1: Vec<Configuration> = trajectory(&r1, &s1.path).iter().map(|x| x.rotated(&q)).collect();
    // flat directions at large t leave the path resolved to about gradient tolerance / curvature
    assert!(max_traj_gap(&t1, &trajectory(&r2, &s2.path)) <= 1e-6);
    let (f1, f2) = (remainder_fit(&s1, &r1, &[0.05]).unwrap(), remainder_fit(&s2, &r2, &[0.05]).unwrap());
    assert!((f1.bounds[0].c - f2.bounds[0].c).abs() <= 1e-6 * f1.bounds[0].c.abs().max(1.0));
}

#[test]
fn seeded_solves_are_reproducible() {
    let r = hyperbolic3(&[1.0, 2.0, 0.5], &cfg(&A), &cfg(&X0));
    let (s1, s2) = (solved(&r, 1e3, 128), solved(&r, 1e3, 128));
    assert_eq!(s1, s2);
}
