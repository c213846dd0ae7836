//! Independent checks of a solved path.
//!
//! Positions along the minimizer are x(t_k) = r₀(t_k) + φ_k + x̃⁰ at grid
//! nodes; velocities come from the discrete Legendre transform of the
//! minimizer (see [`crate::minimizer::node_velocities`]).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::gauss_legendre_8;
use crate::error::{Error, Result};
use crate::kepler::kepler_oracle;
use crate::minimizer::{min_separation, node_velocities, trajectory};
use crate::ode::{integrate_nbody, OdeOptions};
use crate::reference::Regime;
use crate::{Configuration, DiscretePath, ReferenceMotion, SolveReport};

/// Least-squares fit of a model on a time window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    /// Model coefficients, one group per fitted component.
    pub coefficients: Vec<f64>,
    pub exponent: Option<f64>,
    pub window: (f64, f64),
    pub rms_residual: f64,
}

/// Ordinary least squares y ≈ α + β·x; returns (α, β, rms residual).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let beta = sxy / sxx;
    let alpha = my - beta * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - alpha - beta * a).powi(2)).sum();
    (alpha, beta, (rss / n).sqrt())
}

fn window_nodes(path: &DiscretePath, lo: f64, hi: f64) -> Vec<usize> {
    (0..=path.grid.n()).filter(|&k| path.grid.t(k) >= lo * (1.0 - 1e-12) && path.grid.t(k) <= hi * (1.0 + 1e-12)).collect()
}

fn last_window(path: &DiscretePath, fraction: f64) -> Result<(f64, f64, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidInput(format!("window fraction {fraction} not in (0, 1)")));
    }
    let hi = path.grid.t_max();
    let lo = fraction * hi;
    let idx = window_nodes(path, lo, hi);
    if idx.len() < 4 {
        return Err(Error::InvalidInput("fit window holds fewer than 4 nodes".into()));
    }
    Ok((lo, hi, idx))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub max_rel_err: f64,
    pub t_worst: f64,
    pub window: (f64, f64),
    pub samples: usize,
}

/// Integrates Newton's equations from the minimizer's state at the node
/// nearest `t_start` and compares positions at later nodes up to `t_end`:
/// max ‖x_ode − x_path‖_𝓜/(1 + ‖x_path‖_𝓜).
pub fn ode_crosscheck(reference: &ReferenceMotion, report: &SolveReport, t_start: f64, t_end: f64) -> Result<CrossCheck> {
    let path = &report.path;
    let grid = &path.grid;
    if !(t_start >= 1.0 && t_start < t_end && t_end <= grid.t_max() * (1.0 + 1e-12)) {
        return Err(Error::InvalidInput(format!("bad cross-check window [{t_start}, {t_end}]")));
    }
    let sys = &reference.system;
    let k0 = grid.nearest_node(t_start);
    let xs = trajectory(reference, path);
    let vs = node_velocities(reference, path)?;
    let t0 = grid.t(k0);
    let t1 = t_end.min(grid.t_max());
    let flow = integrate_nbody(sys, &xs[k0], &vs[k0], t0, t1, &OdeOptions::default())?;
    let mut worst = (0.0f64, t0);
    let mut samples = 0;
    for k in (k0 + 1)..=grid.n() {
        let t = grid.t(k);
        if t > t1 * (1.0 + 1e-12) {
            break;
        }
        let (x, _) = flow.state(t.min(t1))?;
        let e = sys.mass_norm(&x.sub(&xs[k]))? / (1.0 + sys.mass_norm(&xs[k])?);
        samples += 1;
        if e > worst.0 {
            worst = (e, t);
        }
    }
    Ok(CrossCheck {
        max_rel_err: worst.0,
        t_worst: worst.1,
        window: (t0, t1),
        samples,
    })
}

/// Two-body problems only: propagates the relative state (x(1), ẋ(1)) of the
/// minimizer with the Kepler oracle and compares the relative position at
/// nodes in [t_lo, t_hi]: max |x_rel − x_kepler|/|x_kepler|.
pub fn kepler_crosscheck(reference: &ReferenceMotion, report: &SolveReport, t_lo: f64, t_hi: f64) -> Result<CrossCheck> {
    let sys = &reference.system;
    if sys.n_bodies() != 2 {
        return Err(Error::InvalidInput("Kepler comparison needs N = 2".into()));
    }
    let path = &report.path;
    let xs = trajectory(reference, path);
    let vs = node_velocities(reference, path)?;
    let rel = |c: &Configuration| -> Vec<f64> { c.body(0).iter().zip(c.body(1)).map(|(a, b)| a - b).collect() };
    let (x1, v1) = (rel(&xs[0]), rel(&vs[0]));
    let (m1, m2) = (sys.mass(0), sys.mass(1));
    let idx = window_nodes(path, t_lo, t_hi);
    let errs: Vec<Result<(f64, f64)>> = idx
        .par_iter()
        .map(|&k| {
            let t = path.grid.t(k);
            let (xk, _) = kepler_oracle(m1, m2, &x1, &v1, t - 1.0)?;
            let xp = rel(&xs[k]);
            let d: f64 = xk.iter().zip(&xp).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let n: f64 = xk.iter().map(|a| a * a).sum::<f64>().sqrt();
            Ok((d / n, t))
        })
        .collect();
    let mut worst = (0.0, t_lo);
    for e in errs {
        let (e, t) = e?;
        if e > worst.0 {
            worst = (e, t);
        }
    }
    Ok(CrossCheck {
        max_rel_err: worst.0,
        t_worst: worst.1,
        window: (t_lo, t_hi),
        samples: idx.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyCheck {
    pub h_measured: f64,
    pub h_expected: f64,
    pub residual: f64,
    /// (t, energy) of each sample.
    pub samples: Vec<(f64, f64)>,
}

/// Energy of ODE states started from the minimizer at up to 8 log-spaced
/// nodes of [10, T_max/10] (or of the whole grid when that is too short),
/// each integrated to the next sample node; the mean is `h_measured`.
pub fn energy_check(reference: &ReferenceMotion, report: &SolveReport) -> Result<EnergyCheck> {
    let path = &report.path;
    let grid = &path.grid;
    let sys = &reference.system;
    let (mut lo, mut hi) = (10.0, grid.t_max() / 10.0);
    if hi <= lo * 2.0 {
        lo = 2.0f64.min(grid.t_max() / 4.0);
        hi = grid.t_max() / 2.0;
    }
    let all = window_nodes(path, lo, hi);
    if all.len() < 2 {
        return Err(Error::InvalidInput("grid too coarse for the energy sample".into()));
    }
    let m = 8.min(all.len() - 1);
    let picks: Vec<usize> = (0..=m).map(|i| all[i * (all.len() - 1) / m]).collect();
    let xs = trajectory(reference, path);
    let vs = node_velocities(reference, path)?;
    let samples: Vec<Result<(f64, f64)>> = picks
        .windows(2)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|w| {
            let (ka, kb) = (w[0], w[1]);
            let flow = integrate_nbody(sys, &xs[ka], &vs[ka], grid.t(ka), grid.t(kb), &OdeOptions::default())?;
            let (x, v) = flow.state(grid.t(kb))?;
            Ok((grid.t(kb), sys.energy(&x, &v)?))
        })
        .collect();
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    let h_measured = samples.iter().map(|s| s.1).sum::<f64>() / samples.len() as f64;
    let h_expected = reference.h_expected();
    Ok(EnergyCheck {
        h_measured,
        h_expected,
        residual: (h_measured - h_expected).abs(),
        samples,
    })
}

/// Log-coefficient fit compared with two normalizations of the prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogCoefficientFit {
    pub fit: FitResult,
    /// Fitted c₁ (flattened per body and axis, or per axis for a cluster).
    pub c1: Vec<f64>,
    /// (label, prediction, relative error).
    pub candidates: Vec<(String, Vec<f64>, f64)>,
    pub best: String,
    pub best_rel_err: f64,
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        d
    } else {
        d / n
    }
}

/// Componentwise fit of `series(k)` against c₁·log t + c₀ over the nodes
/// in `idx`; returns (c₁, c₀, pooled rms residual).
fn log_fit(path: &DiscretePath, idx: &[usize], series: impl Fn(usize) -> Vec<f64>) -> (Vec<f64>, Vec<f64>, f64) {
    let ts: Vec<f64> = idx.iter().map(|&k| path.grid.t(k).ln()).collect();
    let ys: Vec<Vec<f64>> = idx.iter().map(|&k| series(k)).collect();
    let m = ys[0].len();
    let (mut c1, mut c0) = (Vec::with_capacity(m), Vec::with_capacity(m));
    let mut ss = 0.0;
    for q in 0..m {
        let y: Vec<f64> = ys.iter().map(|v| v[q]).collect();
        let (a, b, r) = linear_fit(&ts, &y);
        c0.push(a);
        c1.push(b);
        ss += r * r;
    }
    (c1, c0, (ss / m as f64).sqrt())
}

fn pick_best(c1: &[f64], candidates: Vec<(String, Vec<f64>)>) -> (Vec<(String, Vec<f64>, f64)>, String, f64) {
    let scored: Vec<(String, Vec<f64>, f64)> = candidates.into_iter().map(|(l, p)| {
        let e = rel_err(c1, &p);
        (l, p, e)
    }).collect();
    let best = scored.iter().min_by(|a, b| a.2.total_cmp(&b.2)).expect("candidates");
    let (label, err) = (best.0.clone(), best.2);
    (scored, label, err)
}

/// Fit of x(t) − at against c₁ log t + c₀ on [fraction·T_max, T_max],
/// compared with −𝓜⁻¹∇U(a) and −∇U(a).
pub fn chazy_fit(report: &SolveReport, reference: &ReferenceMotion, window_fraction: f64) -> Result<LogCoefficientFit> {
    if reference.regime != Regime::Hyperbolic {
        return Err(Error::RegimeMismatch("Chazy fit needs the hyperbolic regime".into()));
    }
    let path = &report.path;
    let sys = &reference.system;
    let (lo, hi, idx) = last_window(path, window_fraction)?;
    let xs = trajectory(reference, path);
    let a = &reference.a;
    let (c1, c0, rms) = log_fit(path, &idx, |k| xs[k].sub(&a.scaled(path.grid.t(k))).into_vec());
    let g = sys.potential_gradient(a)?;
    let raw = g.scaled(-1.0).into_vec();
    let minv = sys.raise(&g).scaled(-1.0).into_vec();
    let (candidates, best, best_rel_err) =
        pick_best(&c1, vec![("inverse_mass".to_string(), minv), ("unnormalized".to_string(), raw)]);
    let mut coefficients = c1.clone();
    coefficients.extend(c0);
    Ok(LogCoefficientFit {
        fit: FitResult {
            model: "x - a t = c1 log t + c0".into(),
            coefficients,
            exponent: None,
            window: (lo, hi),
            rms_residual: rms,
        },
        c1,
        candidates,
        best,
        best_rel_err,
    })
}

/// Log-log slope of |rᵢ − rⱼ| over [fraction·T_max, T_max].
pub fn growth_fit(report: &SolveReport, reference: &ReferenceMotion, pair: (usize, usize), window_fraction: f64) -> Result<FitResult> {
    let sys = &reference.system;
    let (i, j) = pair;
    if i >= sys.n_bodies() || j >= sys.n_bodies() || i == j {
        return Err(Error::InvalidInput(format!("bad pair ({i}, {j})")));
    }
    let path = &report.path;
    let (lo, hi, idx) = last_window(path, window_fraction)?;
    let xs = trajectory(reference, path);
    let lt: Vec<f64> = idx.iter().map(|&k| path.grid.t(k).ln()).collect();
    let lr: Vec<f64> = idx
        .iter()
        .map(|&k| xs[k].body(i).iter().zip(xs[k].body(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt().ln())
        .collect();
    let (c0, slope, rms) = linear_fit(&lt, &lr);
    Ok(FitResult {
        model: format!("log|r{} - r{}| = p log t + c0", i + 1, j + 1),
        coefficients: vec![slope, c0],
        exponent: Some(slope),
        window: (lo, hi),
        rms_residual: rms,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemainderBound {
    pub epsilon: f64,
    /// max_k ‖φ(t_k)‖_𝓜 / t_k^{1/3+ε}.
    pub c: f64,
    pub t_argmax: f64,
    /// The maximum sits at an interior node (not the last one).
    pub interior: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemainderFit {
    pub bounds: Vec<RemainderBound>,
    /// Log-log slope of ‖φ‖_𝓜 over the last decade.
    pub slope: FitResult,
}

pub fn remainder_fit(report: &SolveReport, reference: &ReferenceMotion, epsilons: &[f64]) -> Result<RemainderFit> {
    if reference.regime == Regime::Hyperbolic {
        return Err(Error::RegimeMismatch("remainder fit needs a parabolic component".into()));
    }
    let sys = &reference.system;
    let path = &report.path;
    let n = path.grid.n();
    let norms: Vec<f64> = (0..=n).map(|k| sys.mass_norm(&path.node_config(k)).unwrap_or(f64::NAN)).collect();
    let bounds = epsilons
        .iter()
        .map(|&eps| {
            let mut best = (0.0, 1.0, 0);
            for k in 1..=n {
                let t = path.grid.t(k);
                let c = norms[k] / t.powf(1.0 / 3.0 + eps);
                if c > best.0 {
                    best = (c, t, k);
                }
            }
            RemainderBound {
                epsilon: eps,
                c: best.0,
                t_argmax: best.1,
                interior: best.2 < n,
            }
        })
        .collect();
    let (lo, hi, idx) = last_window(path, 0.1)?;
    let lt: Vec<f64> = idx.iter().map(|&k| path.grid.t(k).ln()).collect();
    let ln: Vec<f64> = idx.iter().map(|&k| norms[k].max(f64::MIN_POSITIVE).ln()).collect();
    let (c0, slope, rms) = linear_fit(&lt, &ln);
    Ok(RemainderFit {
        bounds,
        slope: FitResult {
            model: "log|phi| = p log t + c0".into(),
            coefficients: vec![slope, c0],
            exponent: Some(slope),
            window: (lo, hi),
            rms_residual: rms,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterComFit {
    pub cluster: usize,
    pub log_fit: LogCoefficientFit,
    /// Log-log slope of the mass norm of the intra-cluster relative
    /// configuration xᵢ − c^K.
    pub relative_growth: FitResult,
}

/// Centre-of-mass motion of cluster K fitted as c^K − a^K t = c₁ log t + c₀.
pub fn cluster_com_fit(report: &SolveReport, reference: &ReferenceMotion, cluster: usize, window_fraction: f64) -> Result<ClusterComFit> {
    let part = &reference.partition;
    if cluster >= part.len() {
        return Err(Error::InvalidInput(format!("no cluster {cluster}")));
    }
    if reference.regime == Regime::Hyperbolic {
        return Err(Error::RegimeMismatch("cluster fit needs a parabolic component".into()));
    }
    let sys = &reference.system;
    let d = sys.dim();
    let members = &part.clusters[cluster];
    let mk = reference.cluster_mass(cluster);
    let path = &report.path;
    let (lo, hi, idx) = last_window(path, window_fraction)?;
    let xs = trajectory(reference, path);
    let com = |x: &Configuration| -> Vec<f64> {
        (0..d).map(|q| members.iter().map(|&i| sys.mass(i) * x.body(i)[q]).sum::<f64>() / mk).collect()
    };
    let ak = com(&reference.a);
    let (c1, c0, rms) = log_fit(path, &idx, |k| {
        let t = path.grid.t(k);
        com(&xs[k]).iter().zip(&ak).map(|(c, a)| c - a * t).collect()
    });
    // Σ_{i∈K} Σ_{j∉K} mᵢmⱼ(aᵢ − aⱼ)/|aᵢ − aⱼ|³
    let mut s = vec![0.0; d];
    for &i in members {
        for j in (0..sys.n_bodies()).filter(|j| !members.contains(j)) {
            let diff: Vec<f64> = (0..d).map(|q| reference.a.body(i)[q] - reference.a.body(j)[q]).collect();
            let r = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
            for q in 0..d {
                s[q] += sys.mass(i) * sys.mass(j) * diff[q] / (r * r * r);
            }
        }
    }
    let with_mass: Vec<f64> = s.iter().map(|v| v / mk).collect();
    let (candidates, best, best_rel_err) =
        pick_best(&c1, vec![("inverse_cluster_mass".to_string(), with_mass), ("unnormalized".to_string(), s)]);
    let mut coefficients = c1.clone();
    coefficients.extend(c0);
    let lt: Vec<f64> = idx.iter().map(|&k| path.grid.t(k).ln()).collect();
    let lr: Vec<f64> = idx
        .iter()
        .map(|&k| {
            let c = com(&xs[k]);
            let r2: f64 = members
                .iter()
                .map(|&i| sys.mass(i) * (0..d).map(|q| (xs[k].body(i)[q] - c[q]).powi(2)).sum::<f64>())
                .sum();
            (0.5 * r2.ln()).max(f64::MIN)
        })
        .collect();
    let (g0, slope, grms) = linear_fit(&lt, &lr);
    Ok(ClusterComFit {
        cluster,
        log_fit: LogCoefficientFit {
            fit: FitResult {
                model: format!("c{} - a t = c1 log t + c0", cluster + 1),
                coefficients,
                exponent: None,
                window: (lo, hi),
                rms_residual: rms,
            },
            c1,
            candidates,
            best,
            best_rel_err,
        },
        relative_growth: FitResult {
            model: "log|y| = p log t + c0".into(),
            coefficients: vec![slope, g0],
            exponent: Some(slope),
            window: (lo, hi),
            rms_residual: grms,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeTimeCheck {
    pub trials: usize,
    pub violations: usize,
    /// Smallest competitor cost minus minimizer cost (negative = cheaper competitor).
    pub worst_margin: f64,
    pub slack: f64,
}

/// Piecewise data of the minimizer on the cells [k_a, k_b).
struct Segment<'a> {
    reference: &'a ReferenceMotion,
    path: &'a DiscretePath,
    ka: usize,
    kb: usize,
}

impl Segment<'_> {
    /// (kinetic, potential) integrals of x + η on [t_a, t_b], with η given
    /// with its time derivative; GL8 per cell.
    fn integrals(&self, eta: &dyn Fn(f64) -> (Configuration, Configuration)) -> Result<(f64, f64)> {
        let sys = &self.reference.system;
        let grid = &self.path.grid;
        let (mut kin, mut pot) = (0.0, 0.0);
        for k in self.ka..self.kb {
            let (t0, t1) = (grid.t(k), grid.t(k + 1));
            let p0 = self.path.node_config(k);
            let p1 = self.path.node_config(k + 1);
            let dphi = p1.sub(&p0).scaled(1.0 / (t1 - t0));
            for (t, w) in gauss_legendre_8(t0, t1) {
                let s = (t - t0) / (t1 - t0);
                let (r0, r1, _) = self.reference.eval(t);
                let (e, de) = eta(t);
                let x = r0.add(&p0.scaled(1.0 - s)).add(&p1.scaled(s)).add(&self.reference.x0_shift).add(&e);
                let v = r1.add(&dphi).add(&de);
                kin += w * sys.kinetic(&v)?;
                pot += w * sys.potential(&x)?;
            }
        }
        Ok((kin, pot))
    }
}

/// Random comparisons of ∫(½‖ẋ‖²_𝓜 + U) + h·(duration) between the
/// minimizer on node intervals [t_a, t_b] and competitors with the same
/// endpoints: smooth bumps vanishing at both ends, or affine time
/// reparametrizations by a factor 1 + δ, δ ∈ [−0.2, 0.2].
pub fn freetime_spotcheck(
    reference: &ReferenceMotion,
    report: &SolveReport,
    h: f64,
    trials: usize,
    rng_seed: u64,
) -> Result<FreeTimeCheck> {
    let path = &report.path;
    let sys = &reference.system;
    let n = path.grid.n();
    if n < 4 {
        return Err(Error::InvalidInput("grid too small for the free-time check".into()));
    }
    let (nb, d) = (sys.n_bodies(), sys.dim());
    let margins: Vec<Result<f64>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            rng.set_stream(trial as u64);
            let span = rng.random_range(2..=40usize.min(n - 1));
            let ka = rng.random_range(1..=(n - span));
            let kb = ka + span;
            let (ta, tb) = (path.grid.t(ka), path.grid.t(kb));
            let seg = Segment { reference, path, ka, kb };
            let none = |_: f64| (Configuration::zeros(nb, d), Configuration::zeros(nb, d));
            let (kin, pot) = seg.integrals(&none)?;
            let dur = tb - ta;
            let base = kin + pot + h * dur;
            let scale = 1.0 + base.abs();
            let cost = if rng.random_bool(0.5) {
                // bump η(t) = ε·sin(jπs)·ξ, s = log(t/t_a)/log(t_b/t_a)
                let j = rng.random_range(1..=3) as f64;
                let raw: Vec<f64> = (0..nb * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let xi = sys.project_com(&Configuration::from_flat(nb, d, raw)?)?;
                let xi = xi.scaled(1.0 / sys.mass_norm(&xi)?);
                let size = sys.mass_norm(&trajectory_at(reference, path, ka))?;
                let eps = rng.random_range(0.01..=0.1) * size;
                let lr = (tb / ta).ln();
                let eta = move |t: f64| {
                    let s = (t / ta).ln() / lr;
                    let w = j * std::f64::consts::PI;
                    (xi.scaled(eps * (w * s).sin()), xi.scaled(eps * w * (w * s).cos() / (t * lr)))
                };
                let (k2, p2) = seg.integrals(&eta)?;
                k2 + p2 + h * dur
            } else {
                // σ(s) = x(t_a + (s − t_a)/(1+δ)) on a (1+δ)-times longer interval
                let delta = rng.random_range(-0.2..=0.2);
                kin / (1.0 + delta) + (1.0 + delta) * (pot + h * dur)
            };
            Ok((cost - base) / scale)
        })
        .collect();
    let margins = margins.into_iter().collect::<Result<Vec<_>>>()?;
    let slack = 1e-8;
    Ok(FreeTimeCheck {
        trials,
        violations: margins.iter().filter(|&&m| m < -slack).count(),
        worst_margin: margins.iter().copied().fold(f64::INFINITY, f64::min),
        slack,
    })
}

fn trajectory_at(reference: &ReferenceMotion, path: &DiscretePath, k: usize) -> Configuration {
    let (r0, _, _) = reference.eval(path.grid.t(k));
    r0.add(&path.node_config(k)).add(&reference.x0_shift)
}

/// Which checks to run and their pass thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub ode: bool,
    pub ode_window: (f64, f64),
    pub ode_tol: f64,
    pub energy: bool,
    pub energy_tol: f64,
    pub fits: bool,
    pub window_fraction: f64,
    pub chazy_tol: f64,
    pub growth_tol: f64,
    pub cluster_tol: f64,
    pub epsilons: Vec<f64>,
    pub freetime: bool,
    pub freetime_trials: usize,
    pub rng_seed: u64,
    pub min_separation: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            ode: true,
            ode_window: (2.0, 100.0),
            ode_tol: 1e-4,
            energy: true,
            energy_tol: 1e-5,
            fits: true,
            window_fraction: 0.1,
            chazy_tol: 0.02,
            growth_tol: 0.01,
            cluster_tol: 0.05,
            epsilons: vec![0.05],
            freetime: true,
            freetime_trials: 100,
            rng_seed: 0,
            min_separation: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<CheckOutcome>,
    pub ode: Option<CrossCheck>,
    pub kepler: Option<CrossCheck>,
    pub energy: Option<EnergyCheck>,
    pub chazy: Option<LogCoefficientFit>,
    pub growth: Vec<FitResult>,
    pub remainder: Option<RemainderFit>,
    pub cluster_com: Vec<ClusterComFit>,
    pub freetime: Option<FreeTimeCheck>,
    pub el_residual: f64,
    pub min_separation: (f64, f64),
    pub passed: bool,
}

fn outcome(name: &str, value: f64, threshold: f64, passed: bool) -> CheckOutcome {
    CheckOutcome {
        name: name.into(),
        passed,
        value,
        threshold,
    }
}

/// Runs every enabled check; `passed` is false if any hard check fails.
pub fn verify_all(reference: &ReferenceMotion, report: &SolveReport, cfg: &VerifyConfig) -> Result<VerificationReport> {
    let sys = &reference.system;
    let path = &report.path;
    let tmax = path.grid.t_max();
    let mut checks = Vec::new();
    let min_sep = min_separation(reference, path, 1.01);
    checks.push(outcome("min_separation", min_sep.0, cfg.min_separation, min_sep.0 >= cfg.min_separation));
    let el = crate::minimizer::euler_lagrange_residual(reference, path)?;

    let mut ode = None;
    let mut kepler = None;
    if cfg.ode {
        let hi = cfg.ode_window.1.min(tmax);
        let c = ode_crosscheck(reference, report, cfg.ode_window.0, hi)?;
        checks.push(outcome("ode_crosscheck", c.max_rel_err, cfg.ode_tol, c.max_rel_err <= cfg.ode_tol));
        ode = Some(c);
        if sys.n_bodies() == 2 && reference.regime == Regime::Hyperbolic {
            let k = kepler_crosscheck(reference, report, cfg.ode_window.0, hi)?;
            checks.push(outcome("kepler_crosscheck", k.max_rel_err, cfg.ode_tol, k.max_rel_err <= cfg.ode_tol));
            kepler = Some(k);
        }
    }
    let mut energy = None;
    if cfg.energy {
        let e = energy_check(reference, report)?;
        checks.push(outcome("energy", e.residual, cfg.energy_tol, e.residual <= cfg.energy_tol));
        energy = Some(e);
    }
    let mut chazy = None;
    let mut growth = Vec::new();
    let mut remainder = None;
    let mut cluster_com = Vec::new();
    if cfg.fits {
        let labels = reference.partition.labels();
        for i in 0..sys.n_bodies() {
            for j in (i + 1)..sys.n_bodies() {
                let g = growth_fit(report, reference, (i, j), cfg.window_fraction)?;
                let same = labels[i] == labels[j] && reference.regime != Regime::Hyperbolic;
                let (target, tol) = match (reference.regime, same) {
                    (Regime::Parabolic, _) => (2.0 / 3.0, cfg.growth_tol),
                    (Regime::HyperbolicParabolic, true) => (2.0 / 3.0, 2.0 * cfg.growth_tol),
                    _ => (1.0, cfg.growth_tol),
                };
                let p = g.exponent.unwrap_or(f64::NAN);
                checks.push(outcome(&format!("growth_{}_{}", i + 1, j + 1), p, target, (p - target).abs() <= tol));
                growth.push(g);
            }
        }
        match reference.regime {
            Regime::Hyperbolic => {
                let c = chazy_fit(report, reference, cfg.window_fraction)?;
                checks.push(outcome("chazy", c.best_rel_err, cfg.chazy_tol, c.best_rel_err <= cfg.chazy_tol));
                chazy = Some(c);
            }
            _ => {
                let r = remainder_fit(report, reference, &cfg.epsilons)?;
                let slope = r.slope.exponent.unwrap_or(f64::NAN);
                let bound = 1.0 / 3.0 + 0.05;
                checks.push(outcome("remainder_slope", slope, bound, slope <= bound || r.bounds.iter().all(|b| b.c == 0.0)));
                remainder = Some(r);
                if reference.regime == Regime::HyperbolicParabolic {
                    for k in 0..reference.partition.len() {
                        if reference.partition.clusters[k].len() < 2 {
                            continue;
                        }
                        let c = cluster_com_fit(report, reference, k, cfg.window_fraction)?;
                        let e = c.log_fit.best_rel_err;
                        checks.push(outcome(&format!("cluster_com_{}", k + 1), e, cfg.cluster_tol, e <= cfg.cluster_tol));
                        cluster_com.push(c);
                    }
                }
            }
        }
    }
    let mut freetime = None;
    if cfg.freetime {
        let h = energy.as_ref().map_or(reference.h_expected(), |e| e.h_measured);
        let f = freetime_spotcheck(reference, report, h, cfg.freetime_trials, cfg.rng_seed)?;
        checks.push(outcome("freetime_violations", f.violations as f64, 0.0, f.violations == 0));
        freetime = Some(f);
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerificationReport {
        checks,
        ode,
        kepler,
        energy,
        chazy,
        growth,
        remainder,
        cluster_com,
        freetime,
        el_residual: el,
        min_separation: min_sep,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_fit_recovers_noisy_log_coefficient() {
        let ts: Vec<f64> = (0..200).map(|i| (1e3f64).ln() + i as f64 * 0.0115).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y: Vec<f64> = ts.iter().map(|l| 0.25 * l + 1.5 + 1e-8 * rng.sample::<f64, _>(StandardNormal)).collect();
        let (a, b, r) = linear_fit(&ts, &y);
        assert!((b - 0.25).abs() <= 1e-6);
        assert!((a - 1.5).abs() <= 1e-5);
        assert!(r <= 2e-8);
    }

    #[test]
    fn rel_err_of_zero_prediction_is_absolute() {
        assert_eq!(rel_err(&[3.0, 4.0], &[0.0, 0.0]), 5.0);
        assert_eq!(rel_err(&[1.0], &[2.0]), 0.5);
    }
}
