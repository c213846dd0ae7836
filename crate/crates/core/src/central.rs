//! Minimal central configurations on the inertia ellipsoid.
//!
//! Optimization runs in the coordinates y = 𝓜^{1/2}x, where the ellipsoid
//! ⟨𝓜x,x⟩ = 1 becomes the unit sphere and the zero-barycenter constraint is
//! the linear condition Σ √mᵢ yᵢ = 0. Each seed runs Riemannian L-BFGS with
//! the normalizing retraction, followed by a few pseudo-inverse Newton steps.

use std::cmp::Ordering;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterPartition;
use crate::configuration::Configuration;
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};
use crate::system::MassSystem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CcOptions {
    pub seeds: usize,
    pub rng_seed: u64,
    /// Tolerance on ‖∇U(b) − λ𝓜b‖_{𝓜⁻¹}.
    pub grad_tol: f64,
    /// Eigenvalues of the constrained Hessian above −hess_tol count as
    /// nonnegative.
    pub hess_tol: f64,
    pub max_iters: usize,
}

impl Default for CcOptions {
    fn default() -> Self {
        Self {
            seeds: 32,
            rng_seed: 0,
            grad_tol: 1e-10,
            hess_tol: 1e-7,
            max_iters: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentralConfigResult<T: Real> {
    pub masses: Vec<T>,
    pub dim: usize,
    /// Normalized so that ⟨𝓜b,b⟩ = 1, zero barycenter.
    pub b: Configuration<T>,
    pub u_value: T,
    pub lambda: T,
    pub beta: T,
    pub multistart_count: usize,
    pub converged_count: usize,
    pub grad_norm: T,
    pub min_hessian_eig: f64,
    pub is_certified_min: bool,
}

impl<T: Real> CentralConfigResult<T> {
    /// β = (9/2·U(b))^{1/3}.
    pub fn beta_for(u: T) -> T {
        (lit::<T>(4.5) * u).cbrt()
    }
}

struct Candidate<T> {
    y: Vec<T>,
    u: T,
    grad_norm: T,
    converged: bool,
}

/// Lowest-U normalized central configuration over `opts.seeds` random starts.
pub fn find_minimal_cc<T: Real>(sys: &MassSystem<T>, opts: &CcOptions) -> Result<CentralConfigResult<T>> {
    if sys.n_bodies() < 2 {
        return Err(Error::DegenerateSystem("central configuration needs N >= 2".into()));
    }
    let seeds = opts.seeds.max(1);
    let cands: Vec<Candidate<T>> = (0..seeds)
        .into_par_iter()
        .map(|k| run_seed(sys, opts, k as u64))
        .collect();

    let mut best: Option<(usize, Vec<f64>)> = None;
    let mut converged_count = 0;
    let tie = lit::<T>(1e-10);
    for (k, c) in cands.iter().enumerate() {
        if !c.converged {
            continue;
        }
        converged_count += 1;
        let key = sorted_distances(sys, &c.y);
        let better = match &best {
            None => true,
            Some((b, bkey)) => {
                let ub = cands[*b].u;
                if c.u < ub - tie {
                    true
                } else if (c.u - ub).abs() <= tie {
                    lex_less(&key, bkey)
                } else {
                    false
                }
            }
        };
        if better {
            best = Some((k, key));
        }
    }
    let Some((k, _)) = best else {
        let g = cands
            .iter()
            .map(|c| c.grad_norm.f64())
            .fold(f64::INFINITY, f64::min);
        return Err(Error::NotConverged(format!(
            "no central-configuration seed converged (best gradient {g:.3e})"
        )));
    };
    let c = &cands[k];
    let b = from_y(sys, &c.y);
    let (u, grad) = sys.potential_and_gradient(&b)?;
    let lambda = grad.dot(&b) / sys.mass_inner(&b, &b)?;
    let min_eig = constrained_hessian_min_eig(sys, &c.y)?;
    Ok(CentralConfigResult {
        masses: sys.masses().to_vec(),
        dim: sys.dim(),
        b,
        u_value: u,
        lambda,
        beta: CentralConfigResult::beta_for(u),
        multistart_count: seeds,
        converged_count,
        grad_norm: c.grad_norm,
        min_hessian_eig: min_eig,
        is_certified_min: min_eig >= -opts.hess_tol,
    })
}

/// Minimal central configuration of every cluster with at least two bodies,
/// in cluster coordinates (cluster barycenter zero, ⟨𝓜_K b, b⟩ = 1).
/// Singleton clusters give `None`.
pub fn find_cluster_ccs<T: Real>(
    sys: &MassSystem<T>,
    partition: &ClusterPartition<T>,
    opts: &CcOptions,
) -> Result<Vec<Option<CentralConfigResult<T>>>> {
    partition
        .clusters
        .iter()
        .map(|c| {
            if c.len() < 2 {
                Ok(None)
            } else {
                let sub = sys.subsystem(c)?;
                find_minimal_cc(&sub, opts).map(Some)
            }
        })
        .collect()
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(Ordering::Less) => return true,
            Some(Ordering::Greater) => return false,
            _ => {}
        }
    }
    false
}

fn sorted_distances<T: Real>(sys: &MassSystem<T>, y: &[T]) -> Vec<f64> {
    let x = from_y(sys, y);
    let n = sys.n_bodies();
    let mut v = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            v.push(crate::system::dist(x.body(i), x.body(j)).f64());
        }
    }
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

fn from_y<T: Real>(sys: &MassSystem<T>, y: &[T]) -> Configuration<T> {
    let d = sys.dim();
    let mut x = Configuration::from_flat(sys.n_bodies(), d, y.to_vec()).expect("shape");
    for i in 0..sys.n_bodies() {
        let s = sys.mass(i).sqrt();
        x.body_mut(i).iter_mut().for_each(|v| *v /= s);
    }
    x
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Removes the component along the barycenter directions (√mᵢ e_c).
fn project_com_y<T: Real>(sys: &MassSystem<T>, v: &mut [T]) {
    let d = sys.dim();
    let mt = sys.total_mass();
    for c in 0..d {
        let mut s = T::zero();
        for i in 0..sys.n_bodies() {
            s += sys.mass(i).sqrt() * v[i * d + c];
        }
        for i in 0..sys.n_bodies() {
            v[i * d + c] -= s * sys.mass(i).sqrt() / mt;
        }
    }
}

fn project_tangent<T: Real>(sys: &MassSystem<T>, y: &[T], v: &mut [T]) {
    project_com_y(sys, v);
    let p = dot(v, y);
    for (vi, &yi) in v.iter_mut().zip(y) {
        *vi -= p * yi;
    }
}

fn normalize<T: Real>(v: &mut [T]) {
    let n = norm(v);
    v.iter_mut().for_each(|x| *x /= n);
}

/// U and the Riemannian gradient at y.
fn value_and_rgrad<T: Real>(sys: &MassSystem<T>, y: &[T]) -> Option<(T, Vec<T>)> {
    let x = from_y(sys, y);
    let (u, g) = sys.potential_and_gradient(&x).ok()?;
    let d = sys.dim();
    let mut eg = g.into_vec();
    for i in 0..sys.n_bodies() {
        let s = sys.mass(i).sqrt();
        eg[i * d..(i + 1) * d].iter_mut().for_each(|v| *v /= s);
    }
    project_tangent(sys, y, &mut eg);
    Some((u, eg))
}

fn random_start<T: Real>(sys: &MassSystem<T>, rng_seed: u64, k: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rng.set_stream(k);
    let nd = sys.n_bodies() * sys.dim();
    let mut y: Vec<T> = (0..nd)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::lit(z)
        })
        .collect();
    project_com_y(sys, &mut y);
    normalize(&mut y);
    y
}

fn run_seed<T: Real>(sys: &MassSystem<T>, opts: &CcOptions, k: u64) -> Candidate<T> {
    let tol = T::lit(opts.grad_tol);
    let mut y = random_start(sys, opts.rng_seed, k);
    let fail = |y: Vec<T>| Candidate {
        y,
        u: T::infinity(),
        grad_norm: T::infinity(),
        converged: false,
    };
    let Some((mut f, mut g)) = value_and_rgrad(sys, &y) else {
        return fail(y);
    };
    let mut mem: Vec<(Vec<T>, Vec<T>)> = Vec::new();
    let m_max = 10;
    let c1 = lit::<T>(1e-4);
    let newton_switch = lit::<T>(1e-5) * (T::one() + f);
    for _ in 0..opts.max_iters {
        let gn = norm(&g);
        if gn <= tol || gn <= newton_switch {
            break;
        }
        let mut dir = two_loop(&g, &mem);
        project_tangent(sys, &y, &mut dir);
        let mut slope = dot(&dir, &g);
        if !(slope < T::zero()) {
            mem.clear();
            dir = g.iter().map(|&v| -v).collect();
            slope = -gn * gn;
        }
        if mem.is_empty() {
            // first step: limit the angular move
            let dn = norm(&dir);
            let cap = lit::<T>(0.2);
            if dn > cap {
                let s = cap / dn;
                dir.iter_mut().for_each(|v| *v *= s);
                slope *= s;
            }
        }
        let mut alpha = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            let mut yn: Vec<T> = y.iter().zip(&dir).map(|(&a, &b)| a + alpha * b).collect();
            project_com_y(sys, &mut yn);
            normalize(&mut yn);
            if let Some((fnew, gnew)) = value_and_rgrad(sys, &yn) {
                if fnew <= f + c1 * alpha * slope {
                    accepted = Some((yn, fnew, gnew));
                    break;
                }
            }
            alpha *= lit(0.5);
        }
        let Some((yn, fnew, gnew)) = accepted else {
            if mem.is_empty() {
                break;
            }
            mem.clear();
            continue;
        };
        let mut s: Vec<T> = yn.iter().zip(&y).map(|(&a, &b)| a - b).collect();
        project_tangent(sys, &yn, &mut s);
        let mut gold = g.clone();
        project_tangent(sys, &yn, &mut gold);
        let yk: Vec<T> = gnew.iter().zip(&gold).map(|(&a, &b)| a - b).collect();
        for (ms, my) in mem.iter_mut() {
            project_tangent(sys, &yn, ms);
            project_tangent(sys, &yn, my);
        }
        let sy = dot(&s, &yk);
        if sy > lit::<T>(1e-12) * norm(&s) * norm(&yk) {
            mem.push((s, yk));
            if mem.len() > m_max {
                mem.remove(0);
            }
        }
        y = yn;
        f = fnew;
        g = gnew;
    }
    // Newton polish with the pseudo-inverse of the constrained Hessian.
    for _ in 0..8 {
        let gn = norm(&g);
        if gn <= tol * lit(1e-2) {
            break;
        }
        let Some(step) = newton_step(sys, &y, &g, f) else { break };
        let mut yn: Vec<T> = y.iter().zip(&step).map(|(&a, &b)| a + b).collect();
        project_com_y(sys, &mut yn);
        normalize(&mut yn);
        let Some((fnew, gnew)) = value_and_rgrad(sys, &yn) else { break };
        if norm(&gnew) >= gn {
            break;
        }
        y = yn;
        f = fnew;
        g = gnew;
    }
    let gn = norm(&g);
    Candidate {
        y,
        u: f,
        grad_norm: gn,
        converged: gn <= tol,
    }
}

fn two_loop<T: Real>(g: &[T], mem: &[(Vec<T>, Vec<T>)]) -> Vec<T> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y) in mem.iter().rev() {
        let rho = T::one() / dot(s, y);
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, &yi)| *qi -= a * yi);
        alphas.push((rho, a));
    }
    if let Some((s, y)) = mem.last() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y), (rho, a)) in mem.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, &si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// P(𝓜^{-1/2}∇²U𝓜^{-1/2} + U·I)P in y coordinates, as f64.
fn constrained_hessian<T: Real>(sys: &MassSystem<T>, y: &[T]) -> Result<DMatrix<f64>> {
    let x = from_y(sys, y);
    let u = sys.potential(&x)?.f64();
    let h = sys.hessian_matrix(&x)?;
    let d = sys.dim();
    let nd = y.len();
    let sq: Vec<f64> = (0..nd).map(|k| sys.mass(k / d).f64().sqrt()).collect();
    let mut a = DMatrix::<f64>::zeros(nd, nd);
    for r in 0..nd {
        for c in 0..nd {
            a[(r, c)] = h[r * nd + c].f64() / (sq[r] * sq[c]);
        }
        a[(r, r)] += u;
    }
    // projector onto the tangent space: remove y and the d barycenter directions
    let mut p = DMatrix::<f64>::identity(nd, nd);
    let yv: Vec<f64> = y.iter().map(|v| v.f64()).collect();
    let mt = sys.total_mass().f64();
    for r in 0..nd {
        for c in 0..nd {
            p[(r, c)] -= yv[r] * yv[c];
            if r % d == c % d {
                p[(r, c)] -= sq[r] * sq[c] / mt;
            }
        }
    }
    Ok(&p * a * &p)
}

fn constrained_hessian_min_eig<T: Real>(sys: &MassSystem<T>, y: &[T]) -> Result<f64> {
    let h = constrained_hessian(sys, y)?;
    let eig = SymmetricEigen::new(h);
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

fn newton_step<T: Real>(sys: &MassSystem<T>, y: &[T], g: &[T], u: T) -> Option<Vec<T>> {
    let h = constrained_hessian(sys, y).ok()?;
    let eig = SymmetricEigen::new(h);
    let thr = 1e-6 * (1.0 + u.f64());
    let nd = y.len();
    let gv: Vec<f64> = g.iter().map(|v| v.f64()).collect();
    let mut step = vec![0.0; nd];
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() <= thr {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        let c: f64 = (0..nd).map(|r| v[r] * gv[r]).sum::<f64>() / lam;
        for r in 0..nd {
            step[r] -= c * v[r];
        }
    }
    Some(step.into_iter().map(T::lit).collect())
}
