//! Minimization of the discrete renormalized action.
//!
//! L-BFGS preconditioned by the inverse of the kinetic Hessian (a tridiagonal
//! matrix per body and axis), with Armijo backtracking that refuses trial
//! paths coming closer to collision than `collision_guard·t^{2/3}`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{ActionBreakdown, ActionEvaluator, ActionOptions};
use crate::configuration::Configuration;
use crate::error::{Error, Result};
use crate::grid::{DiscretePath, TimeGrid};
use crate::reference::ReferenceMotion;
use crate::scalar::{lit, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub grad_tol: f64,
    pub max_iters: usize,
    pub memory: usize,
    pub ls_shrink: f64,
    pub multistart: usize,
    pub rng_seed: u64,
    pub collision_guard: f64,
    pub action: ActionOptions,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iters: 5000,
            memory: 20,
            ls_shrink: 0.5,
            multistart: 4,
            rng_seed: 0,
            collision_guard: 1e-10,
            action: ActionOptions::default(),
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.grad_tol > 0.0
            && self.max_iters > 0
            && self.memory > 0
            && self.ls_shrink > 0.0
            && self.ls_shrink < 1.0
            && self.multistart > 0
            && self.collision_guard > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid solver settings: {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub action: f64,
    pub grad_norm: f64,
    pub step: f64,
}

/// Outcome of one start of a multistart solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub start: usize,
    pub action: f64,
    pub path_norm: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport<T: Real> {
    pub path: DiscretePath<T>,
    pub action: ActionBreakdown<T>,
    pub iterations: usize,
    pub final_grad_norm: T,
    /// (separation, time) over the grid nodes.
    pub min_separation: (T, T),
    /// max over nodes t_k ≥ 2 of |E_k − h| for the discrete energy E_k.
    pub energy_residual: T,
    pub el_residual: T,
    pub converged: bool,
    /// Accepted iterates failing the Hardy inequality check.
    pub hardy_violations: usize,
    pub trace: Vec<TraceEntry>,
    /// Index into `starts` of the selected run.
    pub selected_start: usize,
    pub starts: Vec<StartSummary>,
}

/// Inverse of the kinetic Hessian on nodes 1..=n: Σ_k mᵢ|Δφ|²/(2Δ_k) with φ₀
/// fixed. One tridiagonal factorization serves every body and axis.
struct KineticPreconditioner<T> {
    n: usize,
    /// Thomas forward-sweep coefficients.
    cp: Vec<T>,
    denom: Vec<T>,
    sub: Vec<T>,
}

impl<T: Real> KineticPreconditioner<T> {
    fn new(grid: &TimeGrid<T>) -> Self {
        let n = grid.n();
        let inv: Vec<T> = (0..n).map(|k| T::one() / grid.dt(k)).collect();
        // unknown j ↔ node j+1
        let diag: Vec<T> = (0..n).map(|j| if j + 1 < n { inv[j] + inv[j + 1] } else { inv[j] }).collect();
        let sub: Vec<T> = (0..n).map(|j| if j + 1 < n { -inv[j + 1] } else { T::zero() }).collect();
        let mut cp = vec![T::zero(); n];
        let mut denom = vec![T::zero(); n];
        for j in 0..n {
            let prev = if j == 0 { T::zero() } else { sub[j - 1] * cp[j - 1] };
            denom[j] = diag[j] - prev;
            cp[j] = sub[j] / denom[j];
        }
        Self { n, cp, denom, sub }
    }

    /// out = K⁻¹ g on the node layout of `g` (node 0 ignored and zeroed).
    fn apply(&self, masses: &[T], d: usize, g: &[T], out: &mut [T]) {
        let nd = masses.len() * d;
        let mut rhs = vec![T::zero(); self.n];
        for (i, &m) in masses.iter().enumerate() {
            for q in 0..d {
                let c = i * d + q;
                for j in 0..self.n {
                    let prev = if j == 0 { T::zero() } else { self.sub[j - 1] * rhs[j - 1] };
                    rhs[j] = (g[(j + 1) * nd + c] / m - prev) / self.denom[j];
                }
                for j in (0..self.n.saturating_sub(1)).rev() {
                    rhs[j] = rhs[j] - self.cp[j] * rhs[j + 1];
                }
                for j in 0..self.n {
                    out[(j + 1) * nd + c] = rhs[j];
                }
                out[c] = T::zero();
            }
        }
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

struct RunResult<T: Real> {
    values: Vec<T>,
    action: T,
    grad_norm: T,
    iterations: usize,
    converged: bool,
    hardy_violations: usize,
    trace: Vec<TraceEntry>,
}

/// RMS over nodes 1..=n of the per-node Euclidean projection of the gradient.
fn projected_rms<T: Real>(ev: &ActionEvaluator<T>, g: &[T]) -> T {
    let nd = ev.block();
    let n = ev.grid().n();
    let mut s = T::zero();
    let mut b = vec![T::zero(); nd];
    for k in 1..=n {
        b.copy_from_slice(&g[k * nd..(k + 1) * nd]);
        ev.system().project_euclidean_in_place(&mut b);
        s += dot(&b, &b);
    }
    (s / T::from_usize_lossy(n)).sqrt()
}

fn run<T: Real>(ev: &ActionEvaluator<T>, cfg: &SolveConfig, start: Vec<T>) -> Result<RunResult<T>> {
    let sys = ev.system().clone();
    let d = sys.dim();
    let nd = ev.block();
    let grid = ev.grid().clone();
    let len = start.len();
    let pre = KineticPreconditioner::new(&grid);
    let guard = lit::<T>(cfg.collision_guard);
    let shrink = lit::<T>(cfg.ls_shrink);
    let c1 = lit::<T>(1e-4);
    let grad_tol = lit::<T>(cfg.grad_tol);
    let noise_factor = lit::<T>(64.0) * T::epsilon();

    let mut x = start;
    let mut g = vec![T::zero(); len];
    let mut obj = ev.objective(&x, Some(&mut g), false)?;
    if obj.min_ratio < guard {
        return Err(Error::InvalidInput("initial path violates the collision guard".into()));
    }
    let mut f = obj.total();
    let mut gnorm = projected_rms(ev, &g);
    let mut trace = vec![TraceEntry {
        iter: 0,
        action: f.f64(),
        grad_norm: gnorm.f64(),
        step: 0.0,
    }];
    let mut hardy_violations = 0;
    let mut mem_s: Vec<Vec<T>> = Vec::new();
    let mut mem_y: Vec<Vec<T>> = Vec::new();
    let mut mem_rho: Vec<T> = Vec::new();
    let mut gamma = T::one();
    let mut p = vec![T::zero(); len];
    let mut q = vec![T::zero(); len];
    let mut xt = vec![T::zero(); len];
    let mut gt = vec![T::zero(); len];
    let mut iterations = 0;
    let mut converged = gnorm <= grad_tol;
    let mut fresh_fail = false;

    while !converged && iterations < cfg.max_iters {
        // two-loop recursion with H0 = γK⁻¹
        q.copy_from_slice(&g);
        let m = mem_s.len();
        let mut alpha = vec![T::zero(); m];
        for k in (0..m).rev() {
            alpha[k] = mem_rho[k] * dot(&mem_s[k], &q);
            for (qi, &yi) in q.iter_mut().zip(&mem_y[k]) {
                *qi -= alpha[k] * yi;
            }
        }
        pre.apply(sys.masses(), d, &q, &mut p);
        p.iter_mut().for_each(|v| *v *= gamma);
        for k in 0..m {
            let b = mem_rho[k] * dot(&mem_y[k], &p);
            for (pi, &si) in p.iter_mut().zip(&mem_s[k]) {
                *pi += (alpha[k] - b) * si;
            }
        }
        p.iter_mut().for_each(|v| *v = -*v);
        let mut slope = dot(&g, &p);
        if !(slope < T::zero()) {
            // not a descent direction: restart from the preconditioned gradient
            mem_s.clear();
            mem_y.clear();
            mem_rho.clear();
            pre.apply(sys.masses(), d, &g, &mut p);
            p.iter_mut().for_each(|v| *v = -*v * gamma);
            slope = dot(&g, &p);
            if !(slope < T::zero()) {
                break;
            }
        }
        // cap the first step of a fresh memory at a unit D-norm change
        let mut step = T::one();
        if mem_s.is_empty() {
            let dn = (-slope / gamma).sqrt();
            let cap = T::one() + (dot(&x, &x) / T::from_usize_lossy(len)).sqrt();
            if dn > cap {
                step = cap / dn;
            }
        }
        let noise = noise_factor * obj.abs_scale;
        let mut accepted = None;
        for _ in 0..80 {
            for i in 0..len {
                xt[i] = x[i] + step * p[i];
            }
            match ev.objective(&xt, Some(&mut gt), false) {
                Ok(o) => {
                    let ft = o.total();
                    if ft.is_finite() && o.min_ratio >= guard && ft <= f + c1 * step * slope + noise {
                        accepted = Some(o);
                        break;
                    }
                }
                Err(Error::Collision { .. }) | Err(Error::NonFinite(_)) => {}
                Err(e) => return Err(e),
            }
            step *= shrink;
        }
        let Some(o) = accepted else {
            if fresh_fail || mem_s.is_empty() {
                break;
            }
            // retry once with the memory dropped
            fresh_fail = true;
            mem_s.clear();
            mem_y.clear();
            mem_rho.clear();
            gamma = T::one();
            continue;
        };
        fresh_fail = false;
        iterations += 1;
        for k in 1..=grid.n() {
            sys.project_com_in_place(&mut xt[k * nd..(k + 1) * nd]);
        }
        let s: Vec<T> = xt.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let y: Vec<T> = gt.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > T::epsilon() * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            let mut ky = vec![T::zero(); len];
            pre.apply(sys.masses(), d, &y, &mut ky);
            let yky = dot(&y, &ky);
            if yky > T::zero() {
                gamma = sy / yky;
            }
            if mem_s.len() == cfg.memory {
                mem_s.remove(0);
                mem_y.remove(0);
                mem_rho.remove(0);
            }
            mem_s.push(s);
            mem_y.push(y);
            mem_rho.push(T::one() / sy);
        }
        std::mem::swap(&mut x, &mut xt);
        std::mem::swap(&mut g, &mut gt);
        f = o.total();
        obj = o;
        gnorm = projected_rms(ev, &g);
        trace.push(TraceEntry {
            iter: iterations,
            action: f.f64(),
            grad_norm: gnorm.f64(),
            step: step.f64(),
        });
        let path = DiscretePath::from_values_unchecked(grid.clone(), sys.n_bodies(), d, x.clone());
        if !path.hardy_check(&sys).ok {
            hardy_violations += 1;
        }
        converged = gnorm <= grad_tol;
    }
    Ok(RunResult {
        values: x,
        action: f,
        grad_norm: gnorm,
        iterations,
        converged,
        hardy_violations,
        trace,
    })
}

/// Random start: a few log-time sine modes with ‖φ‖_D = `norm`.
fn random_start<T: Real>(ev: &ActionEvaluator<T>, base: &DiscretePath<T>, norm: T, seed: u64, k: u64) -> Result<Vec<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    let sys = ev.system();
    let nd = ev.block();
    let grid = ev.grid();
    let modes = 3;
    let coef: Vec<f64> = (0..modes * nd).map(|_| StandardNormal.sample(&mut rng)).collect();
    let lt = grid.t_max().ln();
    let mut v = vec![T::zero(); (grid.n() + 1) * nd];
    for k in 1..=grid.n() {
        let s = grid.t(k).ln() / lt;
        for q in 0..nd {
            let mut acc = T::zero();
            for j in 0..modes {
                let w = lit::<T>(std::f64::consts::PI * (j as f64 + 0.5));
                acc += T::lit(coef[j * nd + q]) * (w * s).sin() / lit::<T>(j as f64 + 1.0);
            }
            v[k * nd + q] = acc;
        }
    }
    let pert = DiscretePath::from_raw(grid.clone(), sys, v)?;
    let pn = pert.path_norm(sys);
    let scale = if pn > T::zero() { norm / pn } else { T::zero() };
    Ok(base.values().iter().zip(pert.values()).map(|(&b, &p)| b + scale * p).collect())
}

/// Multistart minimization of the renormalized action.
///
/// Start 0 is `init` (or the zero path); the other `multistart − 1` starts
/// add random perturbations with ‖φ‖_D = 0.1·‖x̃⁰‖_𝓜, and are skipped when
/// x̃⁰ = 0. The selected run is the converged one with the lowest action;
/// ties within 1e-9 go to the smaller ‖φ‖_D, then to lexicographic order of
/// the nodal values.
pub fn solve<T: Real>(
    reference: &ReferenceMotion<T>,
    grid: &TimeGrid<T>,
    cfg: &SolveConfig,
    init: Option<&DiscretePath<T>>,
) -> Result<SolveReport<T>> {
    cfg.validate()?;
    let sys = &reference.system;
    let ev = ActionEvaluator::new(reference, grid, cfg.action)?;
    let base = match init {
        Some(p) => {
            if p.grid.nodes() != grid.nodes() {
                p.resample(grid.clone(), sys)?
            } else {
                p.clone()
            }
        }
        None => DiscretePath::zeros(grid.clone(), sys.n_bodies(), sys.dim()),
    };
    let shift_norm = sys.mass_norm(&reference.x0_shift)?;
    let scale = T::one() + sys.mass_norm(&reference.x0)?;
    let nstarts = if shift_norm <= lit::<T>(1e-12) * scale { 1 } else { cfg.multistart };
    let starts: Vec<Vec<T>> = (0..nstarts)
        .map(|k| {
            if k == 0 {
                Ok(base.values().to_vec())
            } else {
                random_start(&ev, &base, lit::<T>(0.1) * shift_norm, cfg.rng_seed, k as u64)
            }
        })
        .collect::<Result<_>>()?;
    let runs: Vec<Result<RunResult<T>>> = starts.into_par_iter().map(|s| run(&ev, cfg, s)).collect();
    let mut results = Vec::new();
    let mut first_err = None;
    for (k, r) in runs.into_iter().enumerate() {
        match r {
            Ok(r) => results.push((k, r)),
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    if results.is_empty() {
        return Err(first_err.unwrap_or_else(|| Error::NotConverged("no start succeeded".into())));
    }
    let norms: Vec<T> = results
        .iter()
        .map(|(_, r)| DiscretePath::from_values_unchecked(grid.clone(), sys.n_bodies(), sys.dim(), r.values.clone()).path_norm(sys))
        .collect();
    let tie = lit::<T>(1e-9);
    let mut best = 0;
    for i in 1..results.len() {
        let (a, b) = (&results[i].1, &results[best].1);
        let better = if a.converged != b.converged {
            a.converged
        } else if (a.action - b.action).abs() > tie {
            a.action < b.action
        } else if norms[i] != norms[best] {
            norms[i] < norms[best]
        } else {
            a.values.iter().zip(&b.values).find(|(x, y)| x != y).is_some_and(|(x, y)| x < y)
        };
        if better {
            best = i;
        }
    }
    let summaries: Vec<StartSummary> = results
        .iter()
        .zip(&norms)
        .map(|((k, r), pn)| StartSummary {
            start: *k,
            action: r.action.f64(),
            path_norm: pn.f64(),
            grad_norm: r.grad_norm.f64(),
            iterations: r.iterations,
            converged: r.converged,
        })
        .collect();
    let (_, chosen) = results.swap_remove(best);
    let path = DiscretePath::from_values_unchecked(grid.clone(), sys.n_bodies(), sys.dim(), chosen.values);
    let action = ev.eval(&path)?;
    let min_separation = min_separation(reference, &path, T::one());
    let energy_residual = energy_residual(reference, &ev, &path)?;
    let el_residual = el_residual_with(reference, &ev, &path)?;
    Ok(SolveReport {
        path,
        action,
        iterations: chosen.iterations,
        final_grad_norm: chosen.grad_norm,
        min_separation,
        energy_residual,
        el_residual,
        converged: chosen.converged,
        hardy_violations: chosen.hardy_violations,
        trace: chosen.trace,
        selected_start: best,
        starts: summaries,
    })
}

/// Report for a given path without optimizing: stationarity is judged by
/// the same projected-gradient test as `solve`.
pub fn evaluate_path<T: Real>(reference: &ReferenceMotion<T>, path: &DiscretePath<T>, cfg: &SolveConfig) -> Result<SolveReport<T>> {
    cfg.validate()?;
    let sys = &reference.system;
    sys.check_shape(&path.node_config(0))?;
    let ev = ActionEvaluator::new(reference, &path.grid, cfg.action)?;
    let mut g = vec![T::zero(); path.values().len()];
    let obj = ev.objective(path.values(), Some(&mut g), false)?;
    let grad_norm = projected_rms(&ev, &g);
    let converged = grad_norm <= lit::<T>(cfg.grad_tol);
    let action = ev.eval(path)?;
    let hardy_violations = usize::from(!path.hardy_check(sys).ok);
    Ok(SolveReport {
        path: path.clone(),
        iterations: 0,
        final_grad_norm: grad_norm,
        min_separation: min_separation(reference, path, T::one()),
        energy_residual: energy_residual(reference, &ev, path)?,
        el_residual: el_residual_with(reference, &ev, path)?,
        converged,
        hardy_violations,
        trace: vec![TraceEntry {
            iter: 0,
            action: obj.total().f64(),
            grad_norm: grad_norm.f64(),
            step: 0.0,
        }],
        selected_start: 0,
        starts: vec![StartSummary {
            start: 0,
            action: action.total.f64(),
            path_norm: path.path_norm(sys).f64(),
            grad_norm: grad_norm.f64(),
            iterations: 0,
            converged,
        }],
        action,
    })
}

/// x(t_k) = r₀(t_k) + φ_k + x̃⁰ at every node.
pub fn trajectory<T: Real>(reference: &ReferenceMotion<T>, path: &DiscretePath<T>) -> Vec<Configuration<T>> {
    (0..=path.grid.n())
        .map(|k| {
            let t = path.grid.t(k);
            let (r0, _, _) = reference.eval(t);
            r0.add(&path.node_config(k)).add(&reference.x0_shift)
        })
        .collect()
}

/// Smallest pairwise separation over nodes with t_k ≥ `t_from`, and its time.
pub fn min_separation<T: Real>(reference: &ReferenceMotion<T>, path: &DiscretePath<T>, t_from: T) -> (T, T) {
    let sys = &reference.system;
    let mut best = (T::infinity(), T::nan());
    for (k, x) in trajectory(reference, path).iter().enumerate() {
        let t = path.grid.t(k);
        if t < t_from {
            continue;
        }
        let (lo, _) = sys.separations(x);
        if lo < best.0 {
            best = (lo, t);
        }
    }
    best
}

/// Velocities ẋ(t_k) at every node from the discrete Legendre transform:
/// the one-sided momenta 𝓜Δφ/Δ ∓ (Δ/2)G of the adjacent cells, averaged at
/// interior nodes, plus ṙ₀.
pub fn node_velocities<T: Real>(reference: &ReferenceMotion<T>, path: &DiscretePath<T>) -> Result<Vec<Configuration<T>>> {
    let ev = ActionEvaluator::new(reference, &path.grid, ActionOptions::default())?;
    velocities_with(reference, &ev, path)
}

fn velocities_with<T: Real>(
    reference: &ReferenceMotion<T>,
    ev: &ActionEvaluator<T>,
    path: &DiscretePath<T>,
) -> Result<Vec<Configuration<T>>> {
    let sys = &reference.system;
    let (nb, d) = (sys.n_bodies(), sys.dim());
    let nd = nb * d;
    let grid = &path.grid;
    let n = grid.n();
    let v = path.values();
    let forces = ev.cell_forces(v)?;
    let half = lit::<T>(0.5);
    // momenta leaving (plus) and entering (minus) each node
    let plus = |k: usize, out: &mut [T]| {
        let dt = grid.dt(k);
        for i in 0..nb {
            for q in 0..d {
                let c = i * d + q;
                out[c] = sys.mass(i) * (v[(k + 1) * nd + c] - v[k * nd + c]) / dt - half * forces[k * nd + c];
            }
        }
    };
    let minus = |k: usize, out: &mut [T]| {
        let dt = grid.dt(k - 1);
        for i in 0..nb {
            for q in 0..d {
                let c = i * d + q;
                out[c] = sys.mass(i) * (v[k * nd + c] - v[(k - 1) * nd + c]) / dt + half * forces[(k - 1) * nd + c];
            }
        }
    };
    let mut a = vec![T::zero(); nd];
    let mut b = vec![T::zero(); nd];
    let mut out = Vec::with_capacity(n + 1);
    for k in 0..=n {
        if k == 0 {
            plus(0, &mut a);
        } else if k == n {
            minus(n, &mut a);
        } else {
            plus(k, &mut a);
            minus(k, &mut b);
            for q in 0..nd {
                a[q] = half * (a[q] + b[q]);
            }
        }
        let p = Configuration::from_flat(nb, d, a.clone())?;
        let (_, r1, _) = reference.eval(grid.t(k));
        out.push(sys.raise(&p).add(&r1));
    }
    Ok(out)
}

fn energy_residual<T: Real>(reference: &ReferenceMotion<T>, ev: &ActionEvaluator<T>, path: &DiscretePath<T>) -> Result<T> {
    let sys = &reference.system;
    let xs = trajectory(reference, path);
    let vs = velocities_with(reference, ev, path)?;
    let h = reference.h_expected();
    let mut worst = T::zero();
    for (k, (x, v)) in xs.iter().zip(&vs).enumerate() {
        if path.grid.t(k) < lit::<T>(2.0) {
            continue;
        }
        let e = sys.energy(x, v)?;
        worst = worst.max((e - h).abs());
    }
    Ok(worst)
}

/// sup over interior nodes of t_k·‖𝓜φ̈_k − G(t_k)‖_𝓜, with φ̈ the
/// second difference on the nonuniform grid and G = ∇U(x) − 𝓜r̈₀.
pub fn euler_lagrange_residual<T: Real>(reference: &ReferenceMotion<T>, path: &DiscretePath<T>) -> Result<T> {
    let ev = ActionEvaluator::new(reference, &path.grid, ActionOptions::default())?;
    el_residual_with(reference, &ev, path)
}

fn el_residual_with<T: Real>(reference: &ReferenceMotion<T>, _ev: &ActionEvaluator<T>, path: &DiscretePath<T>) -> Result<T> {
    let sys = &reference.system;
    let (nb, d) = (sys.n_bodies(), sys.dim());
    let nd = nb * d;
    let grid = &path.grid;
    let v = path.values();
    let xs = trajectory(reference, path);
    let mut worst = T::zero();
    for k in 1..grid.n() {
        let (h0, h1) = (grid.dt(k - 1), grid.dt(k));
        let t = grid.t(k);
        let (_, _, r2) = reference.eval(t);
        let gu = sys.potential_gradient(&xs[k]).map_err(|e| match e {
            Error::Collision { i, j, separation, .. } => Error::Collision {
                i,
                j,
                separation,
                t: Some(t.f64()),
            },
            e => e,
        })?;
        let mut r = vec![T::zero(); nd];
        for i in 0..nb {
            let m = sys.mass(i);
            for q in 0..d {
                let c = i * d + q;
                let acc = lit::<T>(2.0) / (h0 + h1)
                    * ((v[(k + 1) * nd + c] - v[k * nd + c]) / h1 - (v[k * nd + c] - v[(k - 1) * nd + c]) / h0);
                r[c] = m * acc - (gu.as_slice()[c] - m * r2.as_slice()[c]);
            }
        }
        let norm = sys.mass_inner_unchecked(&r, &r).sqrt();
        worst = worst.max(t * norm);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::central::CcOptions;
    use crate::system::MassSystem;

    fn cfg2(rows: &[[f64; 2]]) -> Configuration<f64> {
        Configuration::from_rows(rows).unwrap()
    }

    fn parabolic(n: usize) -> ReferenceMotion<f64> {
        let sys = MassSystem::equal(n, 2).unwrap();
        ReferenceMotion::from_velocity(&sys, None, None, 1e-9, &CcOptions { seeds: 8, ..Default::default() }).unwrap()
    }

    #[test]
    fn preconditioner_inverts_kinetic_hessian() {
        let grid = TimeGrid::power_law(100.0, 20).unwrap();
        let pre = KineticPreconditioner::new(&grid);
        let masses = [1.0, 3.0];
        let d = 2;
        let nd = 4;
        let n = grid.n();
        let x: Vec<f64> = (0..(n + 1) * nd).map(|i| if i < nd { 0.0 } else { (i as f64 * 0.37).sin() }).collect();
        // K x by the kinetic gradient formula
        let mut kx = vec![0.0; x.len()];
        for k in 0..n {
            let dt = grid.dt(k);
            for i in 0..2 {
                for q in 0..d {
                    let c = i * d + q;
                    let v = masses[i] * (x[(k + 1) * nd + c] - x[k * nd + c]) / dt;
                    kx[(k + 1) * nd + c] += v;
                    kx[k * nd + c] -= v;
                }
            }
        }
        let mut back = vec![0.0; x.len()];
        pre.apply(&masses, d, &kx, &mut back);
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() <= 1e-11, "{a} {b}");
        }
    }

    #[test]
    fn homothetic_is_a_fixed_point() {
        let r = parabolic(3);
        let grid = TimeGrid::power_law(1e4, 512).unwrap();
        let rep = solve(&r, &grid, &SolveConfig::default(), None).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.starts.len(), 1);
        assert!(rep.path.path_norm(&r.system) <= 1e-6);
        assert!(rep.action.total.abs() <= 1e-10);
        assert!(rep.el_residual <= 1e-8, "{}", rep.el_residual);
        assert!(rep.energy_residual <= 1e-8, "{}", rep.energy_residual);
    }

    #[test]
    fn hyperbolic_two_body_converges() {
        let sys = MassSystem::equal(2, 2).unwrap();
        let a = cfg2(&[[1.0, 0.0], [-1.0, 0.0]]);
        let r = ReferenceMotion::hyperbolic(&sys, &a, None, 1e-9).unwrap();
        let grid = TimeGrid::power_law(1e3, 256).unwrap();
        let rep = solve(&r, &grid, &SolveConfig::default(), None).unwrap();
        assert!(rep.converged, "{:?}", rep.trace.last());
        assert!(rep.action.total < 0.0);
        assert_eq!(rep.hardy_violations, 0);
        for w in rep.trace.windows(2) {
            assert!(w[1].action <= w[0].action + 1e-11);
        }
        // a random path is far from critical
        let rnd = DiscretePath::from_fn(grid.clone(), &sys, |t| {
            let s = (t.ln()).sin() * 0.3;
            cfg2(&[[s, 0.5 * s], [-s, -0.5 * s]])
        })
        .unwrap();
        let bad = euler_lagrange_residual(&r, &rnd).unwrap();
        assert!(bad > 1e3 * rep.el_residual.max(1e-8), "{bad} vs {}", rep.el_residual);
    }

    #[test]
    fn invalid_settings_rejected() {
        let r = parabolic(2);
        let grid = TimeGrid::power_law(100.0, 16).unwrap();
        let cfg = SolveConfig { ls_shrink: 1.5, ..Default::default() };
        assert!(matches!(solve(&r, &grid, &cfg, None), Err(Error::InvalidInput(_))));
    }
}
