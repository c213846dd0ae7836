//! Value function of the truncated problem and the stationary
//! Hamilton–Jacobi residual.
//!
//! v(T,x⁰) = min 𝒜^{ren}_{[1,T]}(φ) − ⟨ṙ₀(T), x⁰⟩_𝓜 with φ(1) = 0 and φ(T)
//! free. Expanding ½‖ṙ₀ + φ̇‖² shows the free end is the natural boundary
//! condition ẋ(T) = ṙ₀(T), so no extra boundary term enters the objective.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::TailTreatment;
use crate::error::{Error, Result};
use crate::minimizer::{node_velocities, solve, SolveConfig};
use crate::{Configuration, DiscretePath, ReferenceMotion, SolveReport, TimeGrid};

/// How `grad_v` was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientSource {
    /// −𝓜ẋ(1) of the minimizer.
    Momentum,
    FiniteDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueSample {
    pub x0: Configuration,
    #[serde(rename = "T")]
    pub t: f64,
    pub v_value: f64,
    pub grad_v: Configuration,
    pub gradient_source: GradientSource,
    /// |½‖∇v‖²_{𝓜⁻¹} − U(x⁰) − h|.
    pub hj_residual: f64,
    pub initial_velocity: Configuration,
    pub min_action: f64,
    /// ‖∇v + 𝓜ẋ(1)‖_{𝓜⁻¹}/‖𝓜ẋ(1)‖_{𝓜⁻¹}.
    pub momentum_mismatch: f64,
    pub fd_step: Option<f64>,
    /// Relative change of the difference gradient when the step is halved.
    pub step_halving_change: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HjConfig {
    /// Final time T of the truncated problem.
    #[serde(rename = "T")]
    pub t: f64,
    pub n: usize,
    /// Defaults to 1e-4·(1 + ‖x⁰‖_𝓜).
    pub fd_step: Option<f64>,
    pub richardson: bool,
    pub stability_tol: f64,
}

impl Default for HjConfig {
    fn default() -> Self {
        Self {
            t: 1e3,
            n: 384,
            fd_step: None,
            richardson: true,
            stability_tol: 0.1,
        }
    }
}

/// `grid` cut at `t_end`, with `t_end` as the last node.
fn truncated_grid(grid: &TimeGrid, t_end: f64) -> Result<TimeGrid> {
    if !(t_end > 1.0) || t_end > grid.t_max() * (1.0 + 1e-12) {
        return Err(Error::InvalidInput(format!("T = {t_end} outside (1, {}]", grid.t_max())));
    }
    let mut nodes: Vec<f64> = grid.nodes().iter().copied().filter(|&t| t < t_end * (1.0 - 1e-12)).collect();
    if nodes.len() >= 2 {
        let k = nodes.len() - 1;
        if t_end - nodes[k] < 0.25 * (nodes[k] - nodes[k - 1]) {
            nodes.pop();
        }
    }
    nodes.push(t_end);
    if nodes.len() < 3 {
        return Err(Error::InvalidGrid("truncated grid has fewer than 2 cells".into()));
    }
    TimeGrid::from_nodes(nodes)
}

fn truncated_config(cfg: &SolveConfig) -> SolveConfig {
    let mut c = cfg.clone();
    c.action.tail = TailTreatment::Truncate;
    c
}

struct Minimum {
    reference: ReferenceMotion,
    report: SolveReport,
    v: f64,
}

fn minimize(reference: &ReferenceMotion, x0: &Configuration, grid: &TimeGrid, cfg: &SolveConfig, init: Option<&DiscretePath>) -> Result<Minimum> {
    let r = reference.with_x0(x0)?;
    let report = solve(&r, grid, cfg, init)?;
    if !report.converged {
        return Err(Error::NotConverged(format!(
            "value function at T = {}: gradient norm {:e} after {} iterations",
            grid.t_max(),
            report.final_grad_norm,
            report.iterations
        )));
    }
    let (_, r1, _) = r.eval(grid.t_max());
    let v = report.action.total - r.system.mass_inner(&r1, &r.x0)?;
    Ok(Minimum { reference: r, report, v })
}

fn sample(m: &Minimum, t_end: f64, grad: Option<(Configuration, f64, Option<f64>)>) -> Result<ValueSample> {
    let r = &m.reference;
    let sys = &r.system;
    let v1 = node_velocities(r, &m.report.path)?.swap_remove(0);
    let p1 = sys.lower(&v1);
    let (grad_v, source, fd_step, change) = match grad {
        Some((g, h, c)) => (g, GradientSource::FiniteDifference, Some(h), c),
        None => (p1.scaled(-1.0), GradientSource::Momentum, None, None),
    };
    let g_norm = sys.inverse_mass_norm(&grad_v)?;
    let hj_residual = (0.5 * g_norm * g_norm - sys.potential(&r.x0)? - r.h_expected()).abs();
    let p_norm = sys.inverse_mass_norm(&p1)?;
    let momentum_mismatch = sys.inverse_mass_norm(&grad_v.add(&p1))? / p_norm;
    Ok(ValueSample {
        x0: r.x0.clone(),
        t: t_end,
        v_value: m.v,
        grad_v,
        gradient_source: source,
        hj_residual,
        initial_velocity: v1,
        min_action: m.report.action.total,
        momentum_mismatch,
        fd_step,
        step_halving_change: change,
    })
}

/// v(T,x⁰) on `grid` cut at T. The tail treatment in `cfg` is ignored (the
/// truncated action has none); `grad_v` is the momentum −𝓜ẋ(1).
pub fn value_function(reference: &ReferenceMotion, x0: &Configuration, t_end: f64, grid: &TimeGrid, cfg: &SolveConfig) -> Result<ValueSample> {
    let g = truncated_grid(grid, t_end)?;
    let m = minimize(reference, x0, &g, &truncated_config(cfg), None)?;
    sample(&m, t_end, None)
}

/// Infinite-horizon value min 𝒜^{ren} − ⟨a, x⁰⟩_𝓜 from a solve on the full
/// grid with the configured tail.
pub fn infinite_horizon_value(reference: &ReferenceMotion, x0: &Configuration, grid: &TimeGrid, cfg: &SolveConfig) -> Result<(f64, SolveReport)> {
    let r = reference.with_x0(x0)?;
    let report = solve(&r, grid, cfg, None)?;
    if !report.converged {
        return Err(Error::NotConverged(format!("infinite-horizon value: gradient norm {:e}", report.final_grad_norm)));
    }
    let v = report.action.total - r.system.mass_inner(&r.a, &r.x0)?;
    Ok((v, report))
}

/// Central differences of v over the coordinate perturbations of x⁰, each
/// projected back to zero barycenter. Entry (i, α) is the derivative along
/// e_{iα} − (mᵢ/M)Σⱼe_{jα}, which equals ∂v/∂x_{iα} for a gradient with zero
/// total per axis.
fn fd_gradient(base: &Minimum, grid: &TimeGrid, cfg: &SolveConfig, h: f64) -> Result<Configuration> {
    let r = &base.reference;
    let sys = &r.system;
    let (nb, d) = (sys.n_bodies(), sys.dim());
    let mut warm = cfg.clone();
    warm.multistart = 1;
    let jobs: Vec<(usize, f64)> = (0..nb * d).flat_map(|c| [(c, h), (c, -h)]).collect();
    let values: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(c, s)| {
            let mut x = r.x0.clone();
            x.as_mut_slice()[c] += s;
            let x = sys.project_com(&x)?;
            Ok(minimize(r, &x, grid, &warm, Some(&base.report.path))?.v)
        })
        .collect();
    let values = values.into_iter().collect::<Result<Vec<_>>>()?;
    let g: Vec<f64> = (0..nb * d).map(|c| (values[2 * c] - values[2 * c + 1]) / (2.0 * h)).collect();
    Configuration::from_flat(nb, d, g)
}

/// Finite-difference ∇v at x⁰ and the residual of ½‖∇v‖²_{𝓜⁻¹} − U = h.
/// With `richardson`, the gradient is recomputed at half the step and
/// `UnstableGradient` is returned when it moves by more than
/// `stability_tol` relative to its size.
pub fn hj_residual(reference: &ReferenceMotion, x0: &Configuration, grid: &TimeGrid, cfg: &SolveConfig, hj: &HjConfig) -> Result<ValueSample> {
    let g = truncated_grid(grid, hj.t)?;
    let scfg = truncated_config(cfg);
    let base = minimize(reference, x0, &g, &scfg, None)?;
    let sys = &reference.system;
    let h = hj.fd_step.unwrap_or(1e-4 * (1.0 + sys.mass_norm(&base.reference.x0)?));
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!("fd_step {h} must be positive")));
    }
    let grad = fd_gradient(&base, &g, &scfg, h)?;
    let change = if hj.richardson {
        let half = fd_gradient(&base, &g, &scfg, 0.5 * h)?;
        let scale = sys.inverse_mass_norm(&half)?.max(f64::MIN_POSITIVE);
        let c = sys.inverse_mass_norm(&grad.sub(&half))? / scale;
        if !(c <= hj.stability_tol) {
            return Err(Error::UnstableGradient { change: c });
        }
        Some(c)
    } else {
        None
    };
    sample(&base, hj.t, Some((grad, h, change)))
}

/// `hj_residual` over several initial configurations; errors are kept per
/// point so unstable points can be reported and skipped.
pub fn hj_sweep(reference: &ReferenceMotion, points: &[Configuration], grid: &TimeGrid, cfg: &SolveConfig, hj: &HjConfig) -> Vec<Result<ValueSample>> {
    points.iter().map(|x| hj_residual(reference, x, grid, cfg, hj)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_keeps_prefix_and_ends_at_t() {
        let grid = TimeGrid::power_law(1e4, 512).unwrap();
        let g = truncated_grid(&grid, 1e3).unwrap();
        assert_eq!(g.t_max(), 1e3);
        assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
        let k = g.n() - 1;
        assert_eq!(&g.nodes()[..k], &grid.nodes()[..k]);
        assert!(truncated_grid(&grid, 2e4).is_err());
        assert!(truncated_grid(&grid, 1.0).is_err());
    }
}
