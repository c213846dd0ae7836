//! The discrete renormalized action and its gradient.
//!
//! On the cell [t_k, t_{k+1}] the kinetic term ½‖φ̇‖²_𝓜 is integrated exactly
//! for the piecewise-linear φ; the potential and correction terms use the
//! midpoint rule. With [`TailTreatment::Frozen`] the objective also carries
//! ∫_{T_max}^∞ of the integrand of the extension φ ≡ φ(T_max).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::configuration::Configuration;
use crate::error::{Error, Result};
use crate::grid::{DiscretePath, TimeGrid};
use crate::reference::{ReferenceMotion, Regime};
use crate::scalar::{lit, Real};
use crate::system::MassSystem;

/// What happens beyond T_max.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailTreatment {
    /// The action stops at T_max (free right end).
    Truncate,
    /// φ is held at φ(T_max) for t > T_max and the resulting tail integral
    /// is part of the objective.
    #[default]
    Frozen,
}

/// How U(r₀) and ⟨𝓜r̈₀, φ⟩ are subtracted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RenormForm {
    /// Pairwise: intra-cluster pairs subtract mᵢmⱼ/(β_K|b_ij|t^{2/3}) and add
    /// (2/9)(β_K/M_K)mᵢmⱼ⟨b_ij, φ_ij⟩t^{−4/3}; inter-cluster pairs subtract
    /// mᵢmⱼ/(|a_ij|t).
    #[default]
    ClusterSplit,
    /// U(r₀(t)) and −⟨𝓜r̈₀(t), φ⟩ taken literally.
    Generic,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActionOptions {
    pub tail: TailTreatment,
    pub form: RenormForm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTerm<T> {
    pub i: usize,
    pub j: usize,
    pub same_cluster: bool,
    /// ∫ ½ mᵢmⱼ|φ̇ᵢ − φ̇ⱼ|²/M.
    pub kinetic: T,
    pub potential: T,
    pub correction: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterTerm<T> {
    pub members: Vec<usize>,
    pub kinetic: T,
    pub potential: T,
    pub correction: T,
    pub total: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterPairTerm<T> {
    pub clusters: (usize, usize),
    pub kinetic: T,
    pub potential: T,
    pub total: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionBreakdown<T> {
    pub kinetic: T,
    pub potential_diff: T,
    /// The −⟨𝓜r̈₀, φ⟩ term.
    pub correction: T,
    /// Estimated |∫_{T_max}^∞| from the decay of the last cell's integrand.
    pub tail_bound: T,
    /// Part of `potential_diff + correction` coming from beyond T_max
    /// (zero when truncated).
    pub tail_included: T,
    pub total: T,
    pub tail: TailTreatment,
    pub per_pair: Vec<PairTerm<T>>,
    pub per_cluster: Vec<ClusterTerm<T>>,
    pub per_cluster_pair: Vec<ClusterPairTerm<T>>,
}

#[derive(Clone, Copy, Debug)]
struct Point<T> {
    t: T,
    tau: T,
    s43: T,
    w: T,
}

impl<T: Real> Point<T> {
    fn new(t: T, w: T) -> Self {
        let cb = t.cbrt();
        Self {
            t,
            tau: cb * cb,
            s43: T::one() / (t * cb),
            w,
        }
    }
}

#[derive(Clone, Debug)]
struct Pair<T> {
    i: usize,
    j: usize,
    mm: T,
    cluster: Option<usize>,
    /// (2/9)·mᵢmⱼ/M_K for intra-cluster pairs.
    corr_coef: T,
    /// 1/|a_ij| (inter) or 1/|c_ij| (intra).
    inv_ref: T,
}

/// Sums over one set of quadrature points.
#[derive(Clone, Debug)]
struct Partial<T> {
    pot: T,
    corr: T,
    abs: T,
    min_ratio: T,
    min_sep: T,
    min_sep_t: T,
    pairs: Vec<[T; 2]>,
}

impl<T: Real> Partial<T> {
    fn new(npairs: usize, detail: bool) -> Self {
        Self {
            pot: T::zero(),
            corr: T::zero(),
            abs: T::zero(),
            min_ratio: T::infinity(),
            min_sep: T::infinity(),
            min_sep_t: T::nan(),
            pairs: if detail { vec![[T::zero(); 2]; npairs] } else { Vec::new() },
        }
    }

    fn merge(&mut self, o: &Self) {
        self.pot += o.pot;
        self.corr += o.corr;
        self.abs += o.abs;
        if o.min_ratio < self.min_ratio {
            self.min_ratio = o.min_ratio;
        }
        if o.min_sep < self.min_sep {
            self.min_sep = o.min_sep;
            self.min_sep_t = o.min_sep_t;
        }
        for (a, b) in self.pairs.iter_mut().zip(&o.pairs) {
            a[0] += b[0];
            a[1] += b[1];
        }
    }
}

/// Raw objective value and diagnostics.
#[derive(Clone, Debug)]
pub(crate) struct Objective<T> {
    pub kinetic: T,
    pub pot: T,
    pub corr: T,
    pub tail_pot: T,
    pub tail_corr: T,
    /// Rough magnitude of the summed terms, for rounding-noise estimates.
    pub abs_scale: T,
    /// min over quadrature points of separation / t^{2/3}.
    pub min_ratio: T,
    pub last_integrand: T,
    pub last_t: T,
    pairs: Vec<[T; 2]>,
}

impl<T: Real> Objective<T> {
    pub fn total(&self) -> T {
        self.kinetic + self.pot + self.corr + self.tail_pot + self.tail_corr
    }
}

const CHUNK: usize = 64;
const PAR_WORK: usize = 1 << 14;

const GL8_X: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL8_W: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// 8-point Gauss–Legendre nodes and weights on [a, b].
pub fn gauss_legendre_8<T: Real>(a: T, b: T) -> [(T, T); 8] {
    let h = lit::<T>(0.5) * (b - a);
    let m = lit::<T>(0.5) * (a + b);
    std::array::from_fn(|q| (m + h * T::lit(GL8_X[q]), h * T::lit(GL8_W[q])))
}

/// Breakpoints in u = ln(t/T_max) for the tail integral.
const TAIL_U: [f64; 20] = [
    0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 12.0, 15.0, 18.0, 22.0, 26.0, 30.0, 35.0, 40.0,
];

/// Precomputed evaluator of the discrete renormalized action on one grid.
#[derive(Clone, Debug)]
pub struct ActionEvaluator<T: Real> {
    sys: MassSystem<T>,
    regime: Regime,
    opts: ActionOptions,
    grid: TimeGrid<T>,
    nb: usize,
    d: usize,
    a: Vec<T>,
    c: Vec<T>,
    shift: Vec<T>,
    pairs: Vec<Pair<T>>,
    cells: Vec<Point<T>>,
    tail_points: Vec<Point<T>>,
    clusters: Vec<Vec<usize>>,
}

impl<T: Real> ActionEvaluator<T> {
    pub fn new(reference: &ReferenceMotion<T>, grid: &TimeGrid<T>, opts: ActionOptions) -> Result<Self> {
        let sys = reference.system.clone();
        let nb = sys.n_bodies();
        let d = sys.dim();
        reference.partition.validate(&reference.a)?;
        let labels = reference.partition.labels();
        let a = reference.a.as_slice().to_vec();
        let c = reference.parabolic_coeff().as_slice().to_vec();
        let mut pairs = Vec::new();
        for i in 0..nb {
            for j in (i + 1)..nb {
                let mm = sys.mass(i) * sys.mass(j);
                let diff = |v: &[T]| -> T {
                    (0..d).map(|q| (v[i * d + q] - v[j * d + q]).powi(2)).sum::<T>().sqrt()
                };
                let k = labels[i];
                if labels[j] == k {
                    let mk = reference.cluster_mass(k);
                    pairs.push(Pair {
                        i,
                        j,
                        mm,
                        cluster: Some(k),
                        corr_coef: lit::<T>(2.0 / 9.0) * mm / mk,
                        inv_ref: T::one() / diff(&c),
                    });
                } else {
                    pairs.push(Pair {
                        i,
                        j,
                        mm,
                        cluster: None,
                        corr_coef: T::zero(),
                        inv_ref: T::one() / diff(&a),
                    });
                }
            }
        }
        let cells = (0..grid.n())
            .map(|k| Point::new(lit::<T>(0.5) * (grid.t(k) + grid.t(k + 1)), grid.dt(k)))
            .collect();
        let mut tail_points = Vec::new();
        if opts.tail == TailTreatment::Frozen {
            let tm = grid.t_max();
            for w in TAIL_U.windows(2) {
                for (u, wu) in gauss_legendre_8(T::lit(w[0]), T::lit(w[1])) {
                    let t = tm * u.exp();
                    tail_points.push(Point::new(t, t * wu));
                }
            }
            // beyond the last panel assume f ∝ t^{-p}
            let te = tm * T::lit(TAIL_U[TAIL_U.len() - 1]).exp();
            let p = if reference.regime == Regime::Hyperbolic { lit::<T>(2.0) } else { lit::<T>(4.0 / 3.0) };
            tail_points.push(Point::new(te, te / (p - T::one())));
        }
        Ok(Self {
            sys,
            regime: reference.regime,
            opts,
            grid: grid.clone(),
            nb,
            d,
            a,
            c,
            shift: reference.x0_shift.as_slice().to_vec(),
            pairs,
            cells,
            tail_points,
            clusters: reference.partition.clusters.clone(),
        })
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn options(&self) -> ActionOptions {
        self.opts
    }

    pub fn system(&self) -> &MassSystem<T> {
        &self.sys
    }

    pub(crate) fn block(&self) -> usize {
        self.nb * self.d
    }

    /// Potential and correction density at one time, for a given φ value.
    /// Adds w·∂/∂φ into `grad` when present.
    ///
    /// Each pair difference mᵢmⱼ(1/r − 1/ρ) is formed from r² − ρ², which is
    /// expanded about the reference separation so that nothing cancels when
    /// t is large.
    fn point(
        &self,
        p: &Point<T>,
        phi: &[T],
        w: &mut [T],
        grad: Option<&mut [T]>,
        acc: &mut Partial<T>,
    ) -> Result<()> {
        let d = self.d;
        let nd = self.block();
        let mut r2sum = T::zero();
        for q in 0..nd {
            w[q] = phi[q] + self.shift[q];
            let x = self.a[q] * p.t + self.c[q] * p.tau + w[q];
            r2sum += x * x;
        }
        let thr = self.sys.collision_eps() * (r2sum / T::from_usize_lossy(self.nb)).sqrt();
        let generic = self.opts.form == RenormForm::Generic;
        let two = lit::<T>(2.0);
        let mut pot = T::zero();
        let mut corr = T::zero();
        let mut abs = T::zero();
        let mut grad = grad;
        let mut xij = [T::zero(); 8];
        for (pi, pr) in self.pairs.iter().enumerate() {
            let (i, j) = (pr.i, pr.j);
            // r² = |R + w|², R = a_ij t + c_ij τ
            let (mut aa, mut ac, mut cc, mut rw, mut ww) = (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
            let mut r2 = T::zero();
            for q in 0..d {
                let da = self.a[i * d + q] - self.a[j * d + q];
                let dc = self.c[i * d + q] - self.c[j * d + q];
                let dw = w[i * d + q] - w[j * d + q];
                let rq = da * p.t + dc * p.tau;
                aa += da * da;
                ac += da * dc;
                cc += dc * dc;
                rw += rq * dw;
                ww += dw * dw;
                let xq = rq + dw;
                if q < 8 {
                    xij[q] = xq;
                }
                r2 += xq * xq;
            }
            let r = r2.sqrt();
            if !(r > thr) {
                return Err(Error::Collision {
                    i,
                    j,
                    separation: r.f64(),
                    t: Some(p.t.f64()),
                });
            }
            let ratio = r / p.tau;
            if ratio < acc.min_ratio {
                acc.min_ratio = ratio;
            }
            if r < acc.min_sep {
                acc.min_sep = r;
                acc.min_sep_t = p.t;
            }
            let tt = two * rw + ww;
            // ρ and r² − ρ²
            let (rho, delta) = if generic {
                let rr = aa * p.t * p.t + two * ac * p.t * p.tau + cc * p.tau * p.tau;
                (rr.sqrt(), tt)
            } else if pr.cluster.is_some() {
                // a_ij vanishes inside a cluster
                (p.tau / pr.inv_ref, tt + aa * p.t * p.t + two * ac * p.t * p.tau)
            } else {
                (p.t / pr.inv_ref, tt + two * ac * p.t * p.tau + cc * p.tau * p.tau)
            };
            let term = -pr.mm * delta / (r * rho * (r + rho));
            let u = pr.mm / r;
            pot += term;
            abs += u;
            let mut cterm = T::zero();
            if !generic && pr.cluster.is_some() {
                let mut s = T::zero();
                for q in 0..d {
                    s += (self.c[i * d + q] - self.c[j * d + q]) * (phi[i * d + q] - phi[j * d + q]);
                }
                cterm = pr.corr_coef * p.s43 * s;
                corr += cterm;
                abs += cterm.abs();
            }
            if !acc.pairs.is_empty() {
                acc.pairs[pi][0] += p.w * term;
                acc.pairs[pi][1] += p.w * cterm;
            }
            if let Some(g) = grad.as_deref_mut() {
                let f = p.w * pr.mm / (r2 * r);
                let k = p.w * pr.corr_coef * p.s43;
                for q in 0..d {
                    let dq = if q < 8 {
                        xij[q]
                    } else {
                        (self.a[i * d + q] - self.a[j * d + q]) * p.t
                            + (self.c[i * d + q] - self.c[j * d + q]) * p.tau
                            + w[i * d + q]
                            - w[j * d + q]
                    };
                    let mut v = -f * dq;
                    if !generic && pr.cluster.is_some() {
                        v += k * (self.c[i * d + q] - self.c[j * d + q]);
                    }
                    g[i * d + q] += v;
                    g[j * d + q] -= v;
                }
            }
        }
        if generic {
            // −⟨𝓜r̈₀, φ⟩ = (2/9) t^{-4/3} Σ mᵢ⟨cᵢ, φᵢ⟩
            let k29 = lit::<T>(2.0 / 9.0) * p.s43;
            for i in 0..self.nb {
                let m = self.sys.mass(i);
                let mut s = T::zero();
                for q in 0..d {
                    s += self.c[i * d + q] * phi[i * d + q];
                }
                corr += k29 * m * s;
                if let Some(g) = grad.as_deref_mut() {
                    for q in 0..d {
                        g[i * d + q] += p.w * k29 * m * self.c[i * d + q];
                    }
                }
            }
            abs += corr.abs();
        }
        acc.pot += p.w * pot;
        acc.corr += p.w * corr;
        acc.abs += p.w * abs;
        Ok(())
    }

    /// Cells [lo, hi): potential terms at midpoints; midpoint gradients
    /// (already weighted by Δ) go to `gmid` (one block per cell).
    fn cell_range(
        &self,
        values: &[T],
        lo: usize,
        hi: usize,
        mut gmid: Option<&mut [T]>,
        detail: bool,
    ) -> Result<Partial<T>> {
        let nd = self.block();
        let mut acc = Partial::new(self.pairs.len(), detail);
        let mut phi = vec![T::zero(); nd];
        let mut x = vec![T::zero(); nd];
        let half = lit::<T>(0.5);
        for k in lo..hi {
            for q in 0..nd {
                phi[q] = half * (values[k * nd + q] + values[(k + 1) * nd + q]);
            }
            let g = gmid.as_deref_mut().map(|g| &mut g[(k - lo) * nd..(k - lo + 1) * nd]);
            self.point(&self.cells[k], &phi, &mut x, g, &mut acc)?;
        }
        Ok(acc)
    }

    /// Objective and (optionally) its gradient with respect to all nodal
    /// values. The gradient is the plain partial derivative, whose blocks sum
    /// to zero per node; the entries of node 0 are zeroed.
    pub(crate) fn objective(&self, values: &[T], grad: Option<&mut [T]>, detail: bool) -> Result<Objective<T>> {
        let n = self.grid.n();
        let nd = self.block();
        debug_assert_eq!(values.len(), (n + 1) * nd);
        let want_grad = grad.is_some();
        let half = lit::<T>(0.5);

        // kinetic part, exact for piecewise-linear φ
        let mut kinetic = T::zero();
        let mut grad = grad;
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
        let mut diff = vec![T::zero(); nd];
        for k in 0..n {
            let dt = self.grid.dt(k);
            for q in 0..nd {
                diff[q] = values[(k + 1) * nd + q] - values[k * nd + q];
            }
            kinetic += half * self.sys.mass_inner_unchecked(&diff, &diff) / dt;
            if let Some(g) = grad.as_deref_mut() {
                for i in 0..self.nb {
                    let m = self.sys.mass(i) / dt;
                    for q in 0..self.d {
                        let v = m * diff[i * self.d + q];
                        g[(k + 1) * nd + i * self.d + q] += v;
                        g[k * nd + i * self.d + q] -= v;
                    }
                }
            }
        }

        // potential part over cells, in fixed chunks
        let nchunks = n.div_ceil(CHUNK);
        let mut gmid = if want_grad { vec![T::zero(); n * nd] } else { Vec::new() };
        let parallel = n * self.pairs.len() >= PAR_WORK;
        let partials: Vec<Result<Partial<T>>> = if want_grad {
            let it = gmid.chunks_mut(CHUNK * nd).enumerate();
            if parallel {
                gmid.par_chunks_mut(CHUNK * nd)
                    .enumerate()
                    .map(|(c, g)| self.cell_range(values, c * CHUNK, ((c + 1) * CHUNK).min(n), Some(g), detail))
                    .collect()
            } else {
                it.map(|(c, g)| self.cell_range(values, c * CHUNK, ((c + 1) * CHUNK).min(n), Some(g), detail))
                    .collect()
            }
        } else if parallel {
            (0..nchunks)
                .into_par_iter()
                .map(|c| self.cell_range(values, c * CHUNK, ((c + 1) * CHUNK).min(n), None, detail))
                .collect()
        } else {
            (0..nchunks)
                .map(|c| self.cell_range(values, c * CHUNK, ((c + 1) * CHUNK).min(n), None, detail))
                .collect()
        };
        let mut acc = Partial::new(self.pairs.len(), detail);
        for p in partials {
            acc.merge(&p?);
        }
        if let Some(g) = grad.as_deref_mut() {
            for k in 0..n {
                for q in 0..nd {
                    let v = half * gmid[k * nd + q];
                    g[k * nd + q] += v;
                    g[(k + 1) * nd + q] += v;
                }
            }
        }

        // last-cell integrand, for the tail estimate
        let last_t = self.cells[n - 1].t;
        let last_integrand = {
            let mut one = Partial::new(self.pairs.len(), false);
            let mut phi = vec![T::zero(); nd];
            let mut x = vec![T::zero(); nd];
            for q in 0..nd {
                phi[q] = half * (values[(n - 1) * nd + q] + values[n * nd + q]);
                diff[q] = values[n * nd + q] - values[(n - 1) * nd + q];
            }
            let mut p = self.cells[n - 1];
            p.w = T::one();
            self.point(&p, &phi, &mut x, None, &mut one)?;
            let dt = self.grid.dt(n - 1);
            half * self.sys.mass_inner_unchecked(&diff, &diff) / (dt * dt) + one.pot + one.corr
        };

        // tail of the frozen extension
        let mut tail = Partial::new(self.pairs.len(), detail);
        if !self.tail_points.is_empty() {
            let phi_n = &values[n * nd..(n + 1) * nd];
            let mut x = vec![T::zero(); nd];
            let gn = grad.as_deref_mut().map(|g| &mut g[n * nd..(n + 1) * nd]);
            let mut gtail = vec![T::zero(); nd];
            for p in &self.tail_points {
                let g = if gn.is_some() { Some(gtail.as_mut_slice()) } else { None };
                self.point(p, phi_n, &mut x, g, &mut tail)?;
            }
            if let Some(gn) = gn {
                for q in 0..nd {
                    gn[q] += gtail[q];
                }
            }
        }
        if let Some(g) = grad {
            g[..nd].iter_mut().for_each(|v| *v = T::zero());
        }
        let mut pairs = acc.pairs.clone();
        for (a, b) in pairs.iter_mut().zip(&tail.pairs) {
            a[0] += b[0];
            a[1] += b[1];
        }
        Ok(Objective {
            kinetic,
            pot: acc.pot,
            corr: acc.corr,
            tail_pot: tail.pot,
            tail_corr: tail.corr,
            abs_scale: kinetic + acc.abs + tail.abs,
            min_ratio: acc.min_ratio,
            last_integrand,
            last_t,
            pairs,
        })
    }

    /// Δ_k·G(t_{k+½}) per cell, where G = ∇U(x) − 𝓜r̈₀ is evaluated at the
    /// cell midpoint of φ (one block per cell).
    pub(crate) fn cell_forces(&self, values: &[T]) -> Result<Vec<T>> {
        let n = self.grid.n();
        let mut g = vec![T::zero(); n * self.block()];
        self.cell_range(values, 0, n, Some(&mut g), false)?;
        Ok(g)
    }

    fn check_path(&self, path: &DiscretePath<T>) -> Result<()> {
        if path.grid.nodes() != self.grid.nodes() {
            return Err(Error::InvalidGrid("path grid differs from evaluator grid".into()));
        }
        if path.n_bodies() != self.nb || path.dim() != self.d {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.nb, self.d),
                found: format!("{}x{}", path.n_bodies(), path.dim()),
            });
        }
        Ok(())
    }

    pub fn eval(&self, path: &DiscretePath<T>) -> Result<ActionBreakdown<T>> {
        self.check_path(path)?;
        let o = self.objective(path.values(), None, true)?;
        Ok(self.breakdown(path.values(), &o))
    }

    /// Gradient of the discrete total with respect to nodes 1..=n, each block
    /// projected (Euclidean-orthogonally) onto the zero-barycenter subspace.
    pub fn gradient(&self, path: &DiscretePath<T>) -> Result<Vec<Configuration<T>>> {
        self.check_path(path)?;
        let nd = self.block();
        let mut g = vec![T::zero(); path.values().len()];
        self.objective(path.values(), Some(&mut g), false)?;
        Ok((1..=self.grid.n())
            .map(|k| {
                let mut b = g[k * nd..(k + 1) * nd].to_vec();
                self.sys.project_euclidean_in_place(&mut b);
                Configuration::from_flat(self.nb, self.d, b).expect("shape")
            })
            .collect())
    }

    pub(crate) fn tail_bound(&self, o: &Objective<T>) -> T {
        let tm = self.grid.t_max();
        let f = o.last_integrand.abs();
        if self.regime == Regime::Hyperbolic {
            f * o.last_t * o.last_t / tm
        } else {
            let p = lit::<T>(7.0 / 6.0);
            f * o.last_t.powf(p) * lit::<T>(6.0) * tm.powf(-lit::<T>(1.0 / 6.0))
        }
    }

    fn breakdown(&self, values: &[T], o: &Objective<T>) -> ActionBreakdown<T> {
        let potential_diff = o.pot + o.tail_pot;
        let correction = o.corr + o.tail_corr;
        let total = o.kinetic + potential_diff + correction;

        // per-pair kinetic through the identity Σmᵢ|vᵢ|² = (1/M)Σ_{i<j} mᵢmⱼ|vᵢ−vⱼ|²
        let nd = self.block();
        let d = self.d;
        let mt = self.sys.total_mass();
        let half = lit::<T>(0.5);
        let mut per_pair: Vec<PairTerm<T>> = self
            .pairs
            .iter()
            .zip(&o.pairs)
            .map(|(p, s)| PairTerm {
                i: p.i,
                j: p.j,
                same_cluster: p.cluster.is_some(),
                kinetic: T::zero(),
                potential: s[0],
                correction: s[1],
            })
            .collect();
        for k in 0..self.grid.n() {
            let dt = self.grid.dt(k);
            for (pt, p) in per_pair.iter_mut().zip(&self.pairs) {
                let mut s = T::zero();
                for q in 0..d {
                    let di = values[(k + 1) * nd + p.i * d + q] - values[k * nd + p.i * d + q];
                    let dj = values[(k + 1) * nd + p.j * d + q] - values[k * nd + p.j * d + q];
                    s += (di - dj) * (di - dj);
                }
                pt.kinetic += half * p.mm * s / (mt * dt);
            }
        }
        let labels = {
            let mut l = vec![0; self.nb];
            for (k, c) in self.clusters.iter().enumerate() {
                for &i in c {
                    l[i] = k;
                }
            }
            l
        };
        let mut per_cluster: Vec<ClusterTerm<T>> = self
            .clusters
            .iter()
            .map(|m| ClusterTerm {
                members: m.clone(),
                kinetic: T::zero(),
                potential: T::zero(),
                correction: T::zero(),
                total: T::zero(),
            })
            .collect();
        let mut per_cluster_pair: Vec<ClusterPairTerm<T>> = Vec::new();
        for pt in &per_pair {
            let (ki, kj) = (labels[pt.i], labels[pt.j]);
            if ki == kj {
                let c = &mut per_cluster[ki];
                c.kinetic += pt.kinetic;
                c.potential += pt.potential;
                c.correction += pt.correction;
                c.total += pt.kinetic + pt.potential + pt.correction;
            } else {
                let key = (ki.min(kj), ki.max(kj));
                let idx = match per_cluster_pair.iter().position(|c| c.clusters == key) {
                    Some(i) => i,
                    None => {
                        per_cluster_pair.push(ClusterPairTerm {
                            clusters: key,
                            kinetic: T::zero(),
                            potential: T::zero(),
                            total: T::zero(),
                        });
                        per_cluster_pair.len() - 1
                    }
                };
                let c = &mut per_cluster_pair[idx];
                c.kinetic += pt.kinetic;
                c.potential += pt.potential + pt.correction;
                c.total += pt.kinetic + pt.potential + pt.correction;
            }
        }
        per_cluster_pair.sort_by_key(|c| c.clusters);
        ActionBreakdown {
            kinetic: o.kinetic,
            potential_diff,
            correction,
            tail_bound: self.tail_bound(o),
            tail_included: o.tail_pot + o.tail_corr,
            total,
            tail: self.opts.tail,
            per_pair,
            per_cluster,
            per_cluster_pair,
        }
    }
}

/// Action of `path` with the default options (cluster-split renormalizer,
/// frozen tail).
pub fn action_eval<T: Real>(reference: &ReferenceMotion<T>, path: &DiscretePath<T>) -> Result<ActionBreakdown<T>> {
    ActionEvaluator::new(reference, &path.grid, ActionOptions::default())?.eval(path)
}

/// Gradient of [`action_eval`]'s total with respect to nodes 1..=n.
pub fn action_gradient<T: Real>(reference: &ReferenceMotion<T>, path: &DiscretePath<T>) -> Result<Vec<Configuration<T>>> {
    ActionEvaluator::new(reference, &path.grid, ActionOptions::default())?.gradient(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::central::CcOptions;
    use approx::assert_relative_eq;

    fn cfg(rows: &[[f64; 2]]) -> Configuration<f64> {
        Configuration::from_rows(rows).unwrap()
    }

    fn smooth_path(grid: &TimeGrid<f64>, sys: &MassSystem<f64>, amp: f64, seed: f64) -> DiscretePath<f64> {
        let nb = sys.n_bodies();
        let d = sys.dim();
        let lt = grid.t_max().ln();
        DiscretePath::from_fn(grid.clone(), sys, |t| {
            let s = t.ln() / lt;
            let v: Vec<f64> = (0..nb * d)
                .map(|q| {
                    let ph = seed + 1.3 * q as f64;
                    amp * ((1.0 + q as f64 % 3.0) * std::f64::consts::PI * s + ph).sin() * s.sqrt()
                })
                .collect();
            Configuration::from_flat(nb, d, v).unwrap()
        })
        .unwrap()
    }

    fn two_body() -> (MassSystem<f64>, ReferenceMotion<f64>) {
        let sys = MassSystem::equal(2, 2).unwrap();
        let a = cfg(&[[1.0, 0.0], [-1.0, 0.0]]);
        let r = ReferenceMotion::hyperbolic(&sys, &a, None, 1e-9).unwrap();
        (sys, r)
    }

    fn three_body_hyperbolic() -> (MassSystem<f64>, ReferenceMotion<f64>) {
        let sys = MassSystem::new(vec![1.0, 2.0, 0.5], 2).unwrap();
        let a = cfg(&[[1.0, 0.2], [-0.4, 0.5], [0.3, -1.5]]);
        let x0 = cfg(&[[0.3, 0.8], [-0.6, 0.1], [1.0, -2.0]]);
        let r = ReferenceMotion::hyperbolic(&sys, &a, Some(&x0), 1e-9).unwrap();
        (sys, r)
    }

    fn parabolic3() -> (MassSystem<f64>, ReferenceMotion<f64>) {
        let sys = MassSystem::equal(3, 2).unwrap();
        let cc = CcOptions { seeds: 8, ..CcOptions::default() };
        let r = ReferenceMotion::from_velocity(&sys, None, None, 1e-9, &cc).unwrap();
        (sys, r)
    }

    fn mixed3(x0: Option<&Configuration<f64>>) -> (MassSystem<f64>, ReferenceMotion<f64>) {
        let sys = MassSystem::equal(3, 2).unwrap();
        let a = cfg(&[[0.5, 0.0], [0.5, 0.0], [-1.0, 0.0]]);
        let cc = CcOptions { seeds: 8, ..CcOptions::default() };
        let r = ReferenceMotion::from_velocity(&sys, Some(&a), x0, 1e-9, &cc).unwrap();
        (sys, r)
    }

    #[test]
    fn homothetic_path_has_zero_action() {
        let (sys, r) = parabolic3();
        let grid = TimeGrid::power_law(1e4, 512).unwrap();
        let p = DiscretePath::zeros(grid, 3, 2);
        let b = action_eval(&r, &p).unwrap();
        assert!(b.total.abs() <= 1e-14, "{}", b.total);
        assert_eq!(b.kinetic, 0.0);
        assert!(b.tail_bound <= 1e-14);
        let g = action_gradient(&r, &p).unwrap();
        let gmax = g.iter().map(|c| c.max_abs()).fold(0.0, f64::max);
        assert!(gmax <= 1e-13, "{gmax}");
        let _ = sys;
    }

    #[test]
    fn straight_line_has_zero_action() {
        let (_, r) = two_body();
        let p = DiscretePath::zeros(TimeGrid::power_law(1e4, 256).unwrap(), 2, 2);
        let b = action_eval(&r, &p).unwrap();
        assert!(b.total.abs() <= 1e-15);
        // not a critical point: forces act on x = at
        let g = action_gradient(&r, &p).unwrap();
        assert!(g[0].max_abs() > 1e-4);
    }

    #[test]
    fn total_is_sum_of_parts() {
        let (sys, r) = three_body_hyperbolic();
        let grid = TimeGrid::power_law(1e3, 64).unwrap();
        let p = smooth_path(&grid, &sys, 0.2, 0.4);
        let b = action_eval(&r, &p).unwrap();
        assert_eq!(b.total, b.kinetic + b.potential_diff + b.correction);
        assert!(b.tail_bound >= 0.0);
        let pk: f64 = b.per_pair.iter().map(|p| p.kinetic).sum();
        assert_relative_eq!(pk, b.kinetic, max_relative = 1e-12);
        let pp: f64 = b.per_pair.iter().map(|p| p.potential).sum();
        assert_relative_eq!(pp, b.potential_diff, max_relative = 1e-12);
    }

    fn fd_check(r: &ReferenceMotion<f64>, p: &DiscretePath<f64>, opts: ActionOptions) {
        let sys = &r.system;
        let ev = ActionEvaluator::new(r, &p.grid, opts).unwrap();
        let g = ev.gradient(p).unwrap();
        for (k, gk) in g.iter().enumerate() {
            assert!(sys.is_centered(gk), "block {k} not centered");
        }
        // random directions inside the zero-barycenter subspace
        for s in 0..5 {
            let dir = smooth_path(&p.grid, sys, 1.0, 2.1 + s as f64);
            let h = 1e-6;
            let plus = DiscretePath::from_raw(
                p.grid.clone(),
                sys,
                p.values().iter().zip(dir.values()).map(|(&a, &b)| a + h * b).collect(),
            )
            .unwrap();
            let minus = DiscretePath::from_raw(
                p.grid.clone(),
                sys,
                p.values().iter().zip(dir.values()).map(|(&a, &b)| a - h * b).collect(),
            )
            .unwrap();
            let fd = (ev.eval(&plus).unwrap().total - ev.eval(&minus).unwrap().total) / (2.0 * h);
            let nd = dir.block();
            let exact: f64 = g
                .iter()
                .enumerate()
                .map(|(k, gk)| {
                    gk.as_slice().iter().zip(&dir.values()[(k + 1) * nd..(k + 2) * nd]).map(|(a, b)| a * b).sum::<f64>()
                })
                .sum();
            assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1e-3), "fd {fd} exact {exact}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences_all_regimes() {
        let (sys, r) = three_body_hyperbolic();
        let grid = TimeGrid::power_law(1e3, 48).unwrap();
        let p = smooth_path(&grid, &sys, 0.3, 0.1);
        for tail in [TailTreatment::Frozen, TailTreatment::Truncate] {
            for form in [RenormForm::ClusterSplit, RenormForm::Generic] {
                fd_check(&r, &p, ActionOptions { tail, form });
            }
        }
        let (sys, r) = parabolic3();
        let x0 = r.x0.add(&cfg(&[[0.05, 0.1], [-0.1, 0.02], [0.0, -0.07]]));
        let r = r.with_x0(&x0).unwrap();
        let p = smooth_path(&grid, &sys, 0.3, 0.7);
        fd_check(&r, &p, ActionOptions::default());
        fd_check(&r, &p, ActionOptions { tail: TailTreatment::Frozen, form: RenormForm::Generic });
        let (sys, r) = mixed3(Some(&cfg(&[[0.7, 0.9], [0.3, -1.0], [-1.0, 0.1]])));
        let p = smooth_path(&grid, &sys, 0.3, 1.7);
        fd_check(&r, &p, ActionOptions::default());
    }

    #[test]
    fn split_equals_generic_for_singletons() {
        let (sys, r) = three_body_hyperbolic();
        let grid = TimeGrid::power_law(1e3, 64).unwrap();
        for s in 0..5 {
            let p = smooth_path(&grid, &sys, 0.5, s as f64);
            let a = ActionEvaluator::new(&r, &grid, ActionOptions::default()).unwrap().eval(&p).unwrap();
            let b = ActionEvaluator::new(&r, &grid, ActionOptions { form: RenormForm::Generic, ..Default::default() })
                .unwrap()
                .eval(&p)
                .unwrap();
            assert!((a.total - b.total).abs() <= 1e-10);
        }
    }

    #[test]
    fn mixed_forms_differ_by_a_constant() {
        let (sys, r) = mixed3(Some(&cfg(&[[0.7, 0.9], [0.3, -1.0], [-1.0, 0.1]])));
        let grid = TimeGrid::power_law(1e3, 64).unwrap();
        let gen = ActionEvaluator::new(&r, &grid, ActionOptions { form: RenormForm::Generic, ..Default::default() }).unwrap();
        let spl = ActionEvaluator::new(&r, &grid, ActionOptions::default()).unwrap();
        let diffs: Vec<f64> = (0..4)
            .map(|s| {
                let p = smooth_path(&grid, &sys, 0.4, s as f64 * 0.9);
                let a = spl.eval(&p).unwrap();
                let b = gen.eval(&p).unwrap();
                // the correction terms agree exactly; only the renormalizer moves
                let rel = (a.correction - b.correction).abs() / a.correction.abs().max(1e-300);
                assert!(rel <= 1e-11, "{} vs {}", a.correction, b.correction);
                a.total - b.total
            })
            .collect();
        for d in &diffs {
            assert!((d - diffs[0]).abs() <= 1e-10, "{diffs:?}");
        }
    }

    #[test]
    fn translation_gauge() {
        let (sys, r) = three_body_hyperbolic();
        let grid = TimeGrid::power_law(1e3, 32).unwrap();
        let p = smooth_path(&grid, &sys, 0.5, 0.3);
        let shifted: Vec<f64> = p
            .values()
            .iter()
            .enumerate()
            .map(|(q, &v)| v + if q % 2 == 0 { 3.0 } else { -1.5 } * (1.0 + (q / 6) as f64))
            .collect();
        let q = DiscretePath::from_raw(grid, &sys, shifted).unwrap();
        let a = action_eval(&r, &p).unwrap().total;
        let b = action_eval(&r, &q).unwrap().total;
        assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn second_order_under_refinement() {
        let (sys, r) = three_body_hyperbolic();
        let phi = |t: f64| {
            let s = t.ln();
            let v: Vec<f64> = (0..6).map(|q| 0.3 * (s * (0.4 + 0.1 * q as f64) + q as f64).sin() * (1.0 - 1.0 / t)).collect();
            Configuration::from_flat(3, 2, v).unwrap()
        };
        let vals: Vec<f64> = [32, 64, 128, 256]
            .iter()
            .map(|&n| {
                let g = TimeGrid::power_law(1e3, n).unwrap();
                let p = DiscretePath::from_fn(g.clone(), &sys, phi).unwrap();
                ActionEvaluator::new(&r, &g, ActionOptions { tail: TailTreatment::Truncate, ..Default::default() })
                    .unwrap()
                    .eval(&p)
                    .unwrap()
                    .total
            })
            .collect();
        for w in vals.windows(3) {
            let ratio = (w[1] - w[0]) / (w[2] - w[1]);
            assert!((ratio - 4.0).abs() <= 0.8, "{vals:?} ratio {ratio}");
        }
    }

    #[test]
    fn collision_reported_with_time() {
        let (sys, r) = two_body();
        let grid = TimeGrid::power_law(100.0, 16).unwrap();
        let (t4, t5) = (grid.t(4), grid.t(5));
        // φ cancels the relative motion on the cell [t4, t5]
        let p = DiscretePath::from_fn(grid.clone(), &sys, |t| {
            if t >= t4 && t <= t5 {
                Configuration::from_rows(&[[-t, 0.0], [t, 0.0]]).unwrap()
            } else {
                Configuration::zeros(2, 2)
            }
        })
        .unwrap();
        match action_eval(&r, &p) {
            Err(Error::Collision { t: Some(t), .. }) => assert!(t > t4 && t < t5),
            other => panic!("{other:?}"),
        }
    }
}
