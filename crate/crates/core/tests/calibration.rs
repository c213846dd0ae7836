use expansive::central::find_minimal_cc;
use expansive::io::path_from_trajectory;
use expansive::kepler::{asymptotic_velocity, kepler_oracle};
use expansive::minimizer::evaluate_path;
use expansive::verify::{growth_fit, ode_crosscheck};
use expansive::{CcOptions, Configuration, MassSystem, ReferenceMotion, SolveConfig, SolveReport, TimeGrid};

const M: (f64, f64) = (1.0, 2.0);

fn bodies(rel: &[f64]) -> Configuration {
    let mt = M.0 + M.1;
    let rows = [[-M.1 / mt * rel[0], -M.1 / mt * rel[1]], [M.0 / mt * rel[0], M.0 / mt * rel[1]]];
    Configuration::from_rows(&rows).unwrap()
}

fn system() -> MassSystem {
    MassSystem::new(vec![M.0, M.1], 2).unwrap()
}

/// Exact two-body motion from (x, v) at t = 1, sampled on a power-law grid.
fn oracle_report(reference: &ReferenceMotion, x1: &[f64], v1: &[f64], t_max: f64, n: usize, kick: f64) -> SolveReport {
    let grid = TimeGrid::power_law(t_max, n).unwrap();
    let times: Vec<f64> = (0..=n).map(|k| grid.t(k)).collect();
    let mut xs: Vec<Configuration> = times
        .iter()
        .map(|&t| bodies(&kepler_oracle(M.0, M.1, x1, v1, t - 1.0).unwrap().0))
        .collect();
    if kick != 0.0 {
        let k = n / 2;
        xs[k] = xs[k].add(&bodies(&[kick, 0.0]));
    }
    let path = path_from_trajectory(reference, &times, &xs).unwrap();
    evaluate_path(reference, &path, &SolveConfig::default()).unwrap()
}

fn hyperbolic_case() -> (ReferenceMotion, Vec<f64>, Vec<f64>) {
    let (x1, v1) = (vec![1.0, 0.5], vec![3.0, 0.8]);
    let a = asymptotic_velocity(M.0, M.1, &x1, &v1).unwrap();
    let r = ReferenceMotion::hyperbolic(&system(), &bodies(&a), Some(&bodies(&x1)), 1e-9).unwrap();
    (r, x1, v1)
}

#[test]
fn growth_exponent_is_one_on_an_exact_hyperbola() {
    let (r, x1, v1) = hyperbolic_case();
    let rep = oracle_report(&r, &x1, &v1, 1e4, 512, 0.0);
    let f = growth_fit(&rep, &r, (0, 1), 0.1).unwrap();
    assert!((f.exponent.unwrap() - 1.0).abs() <= 0.01, "{:?}", f.exponent);
}

#[test]
fn growth_exponent_is_two_thirds_on_an_exact_parabola() {
    let sys = system();
    let cc = find_minimal_cc(&sys, &CcOptions::default()).unwrap();
    let x1 = [1.0f64, 0.3];
    let speed = (2.0 * (M.0 + M.1) / (x1[0] * x1[0] + x1[1] * x1[1]).sqrt()).sqrt();
    // zero energy with some angular momentum
    let (c, s) = (0.95f64, (1.0 - 0.95f64 * 0.95).sqrt());
    let ux = [x1[0] / x1[0].hypot(x1[1]), x1[1] / x1[0].hypot(x1[1])];
    let v1 = [speed * (c * ux[0] - s * ux[1]), speed * (c * ux[1] + s * ux[0])];
    let r = ReferenceMotion::parabolic(&sys, cc, Some(&bodies(&x1)), 1e-9).unwrap();
    let rep = oracle_report(&r, &x1, &v1, 1e4, 512, 0.0);
    let f = growth_fit(&rep, &r, (0, 1), 0.1).unwrap();
    assert!((f.exponent.unwrap() - 2.0 / 3.0).abs() <= 0.01, "{:?}", f.exponent);
}

#[test]
fn ode_crosscheck_accepts_the_oracle_and_rejects_a_kicked_path() {
    let (r, x1, v1) = hyperbolic_case();
    let good = oracle_report(&r, &x1, &v1, 1e3, 512, 0.0);
    let e_good = ode_crosscheck(&r, &good, 2.0, 1e3).unwrap().max_rel_err;
    assert!(e_good <= 1e-3, "{e_good}");
    let bad = oracle_report(&r, &x1, &v1, 1e3, 512, 0.5);
    let e_bad = ode_crosscheck(&r, &bad, 2.0, 1e3).unwrap().max_rel_err;
    assert!(e_bad >= 100.0 * e_good, "{e_bad} vs {e_good}");
    assert!(!bad.converged);
}
