//! Graded time grids on [1, T_max] and piecewise-linear paths φ with φ(1) = 0.

use serde::{Deserialize, Serialize};

use crate::configuration::Configuration;
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};
use crate::system::MassSystem;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Grading {
    /// t_k = T_max^{k/n}.
    PowerLaw,
    /// t_{k+1} − t_k = h₀·ratio^k, h₀ fitted so that t_n = T_max.
    Geometric { ratio: f64 },
    /// Nodes given explicitly (e.g. read back from a table).
    Explicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid<T> {
    nodes: Vec<T>,
    grading: Grading,
}

impl<T: Real> TimeGrid<T> {
    pub fn power_law(t_max: T, n: usize) -> Result<Self> {
        check_params(t_max, n)?;
        let lt = t_max.ln();
        let nn = T::from_usize_lossy(n);
        let mut nodes: Vec<T> = (0..=n)
            .map(|k| (lt * T::from_usize_lossy(k) / nn).exp())
            .collect();
        nodes[0] = T::one();
        nodes[n] = t_max;
        Self::checked(nodes, Grading::PowerLaw)
    }

    pub fn geometric(t_max: T, n: usize, ratio: T) -> Result<Self> {
        check_params(t_max, n)?;
        if !(ratio > T::zero()) || !ratio.is_finite() {
            return Err(Error::InvalidGrid("geometric ratio must be positive".into()));
        }
        let nn = T::from_usize_lossy(n);
        let h0 = if (ratio - T::one()).abs() < lit(1e-12) {
            (t_max - T::one()) / nn
        } else {
            (t_max - T::one()) * (ratio - T::one()) / (ratio.powf(nn) - T::one())
        };
        let mut nodes = Vec::with_capacity(n + 1);
        let mut t = T::one();
        let mut h = h0;
        nodes.push(t);
        for _ in 0..n {
            t += h;
            h *= ratio;
            nodes.push(t);
        }
        nodes[n] = t_max;
        Self::checked(nodes, Grading::Geometric { ratio: ratio.f64() })
    }

    pub fn from_nodes(nodes: Vec<T>) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::InvalidGrid("need at least 3 nodes".into()));
        }
        Self::checked(nodes, Grading::Explicit)
    }

    fn checked(nodes: Vec<T>, grading: Grading) -> Result<Self> {
        if nodes[0] != T::one() {
            return Err(Error::InvalidGrid(format!("first node must be 1, got {}", nodes[0])));
        }
        for k in 1..nodes.len() {
            if !(nodes[k] > nodes[k - 1]) || !nodes[k].is_finite() {
                return Err(Error::InvalidGrid(format!(
                    "nodes must increase strictly (node {k}: {} after {})",
                    nodes[k],
                    nodes[k - 1]
                )));
            }
        }
        if *nodes.last().unwrap() < lit(10.0) {
            return Err(Error::InvalidGrid("T_max must be at least 10".into()));
        }
        Ok(Self { nodes, grading })
    }

    /// Number of cells n (nodes are t₀..t_n).
    pub fn n(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn t(&self, k: usize) -> T {
        self.nodes[k]
    }

    pub fn t_max(&self) -> T {
        *self.nodes.last().unwrap()
    }

    pub fn grading(&self) -> Grading {
        self.grading
    }

    pub fn dt(&self, k: usize) -> T {
        self.nodes[k + 1] - self.nodes[k]
    }

    /// Grid with every cell split in two.
    pub fn refined(&self) -> Self {
        let mut nodes = Vec::with_capacity(2 * self.n() + 1);
        for k in 0..self.n() {
            nodes.push(self.nodes[k]);
            // geometric midpoint keeps power-law grids power-law
            let mid = match self.grading {
                Grading::PowerLaw => (self.nodes[k] * self.nodes[k + 1]).sqrt(),
                _ => lit::<T>(0.5) * (self.nodes[k] + self.nodes[k + 1]),
            };
            nodes.push(mid);
        }
        nodes.push(self.t_max());
        let grading = match self.grading {
            Grading::PowerLaw => Grading::PowerLaw,
            _ => Grading::Explicit,
        };
        Self { nodes, grading }
    }

    /// Index k with t_k ≤ t < t_{k+1} (clamped to a valid cell).
    pub fn cell_of(&self, t: T) -> usize {
        let n = self.n();
        match self.nodes.binary_search_by(|x| x.partial_cmp(&t).unwrap_or(std::cmp::Ordering::Less)) {
            Ok(k) => k.min(n - 1),
            Err(k) => k.saturating_sub(1).min(n - 1),
        }
    }

    /// Index of the node closest to t in log time.
    pub fn nearest_node(&self, t: T) -> usize {
        let k = self.cell_of(t);
        if k < self.n() && (t.ln() - self.nodes[k].ln()).abs() > (self.nodes[k + 1].ln() - t.ln()).abs() {
            k + 1
        } else {
            k
        }
    }
}

fn check_params<T: Real>(t_max: T, n: usize) -> Result<()> {
    if !(t_max >= lit(10.0)) || !t_max.is_finite() {
        return Err(Error::InvalidGrid(format!("T_max must be finite and >= 10, got {t_max}")));
    }
    if n < 2 {
        return Err(Error::InvalidGrid(format!("need at least 2 cells, got {n}")));
    }
    Ok(())
}

/// Nodal values of φ on a grid; node 0 is pinned to zero and every node has
/// zero mass-weighted barycenter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretePath<T> {
    pub grid: TimeGrid<T>,
    n_bodies: usize,
    dim: usize,
    values: Vec<T>,
}

/// Result of the Hardy inequality check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardyCheck<T> {
    /// ∫₁^{T_max} ‖φ‖²_𝓜/t² dt.
    pub lhs: T,
    /// 4‖φ‖²_D.
    pub rhs: T,
    /// max_k ‖φ(t_k)‖²_𝓜/(t_k − 1).
    pub sup_lhs: T,
    /// ‖φ‖²_D.
    pub sup_rhs: T,
    pub ok: bool,
}

impl<T: Real> DiscretePath<T> {
    pub fn zeros(grid: TimeGrid<T>, n_bodies: usize, dim: usize) -> Self {
        let len = (grid.n() + 1) * n_bodies * dim;
        Self {
            grid,
            n_bodies,
            dim,
            values: vec![T::zero(); len],
        }
    }

    /// Builds a path from raw nodal values ((n+1)·N·d, node-major); every node
    /// is projected to zero barycenter and node 0 is set to zero.
    pub fn from_raw(grid: TimeGrid<T>, sys: &MassSystem<T>, mut values: Vec<T>) -> Result<Self> {
        let nd = sys.n_bodies() * sys.dim();
        if values.len() != (grid.n() + 1) * nd {
            return Err(Error::DimensionMismatch {
                expected: format!("{} nodal values", (grid.n() + 1) * nd),
                found: format!("{}", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("path values"));
        }
        for chunk in values.chunks_mut(nd) {
            sys.project_com_in_place(chunk);
        }
        values[..nd].iter_mut().for_each(|v| *v = T::zero());
        Ok(Self {
            grid,
            n_bodies: sys.n_bodies(),
            dim: sys.dim(),
            values,
        })
    }

    /// Path with φ(t_k) = f(t_k) (projected, node 0 forced to zero).
    pub fn from_fn(grid: TimeGrid<T>, sys: &MassSystem<T>, f: impl Fn(T) -> Configuration<T>) -> Result<Self> {
        let mut v = Vec::with_capacity((grid.n() + 1) * sys.n_bodies() * sys.dim());
        for &t in grid.nodes() {
            let c = f(t);
            sys.check_shape(&c)?;
            v.extend_from_slice(c.as_slice());
        }
        Self::from_raw(grid, sys, v)
    }

    pub fn n_bodies(&self) -> usize {
        self.n_bodies
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Per-node block length N·d.
    pub fn block(&self) -> usize {
        self.n_bodies * self.dim
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Wraps values already known to be centered with node 0 at zero.
    pub(crate) fn from_values_unchecked(grid: TimeGrid<T>, n_bodies: usize, dim: usize, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), (grid.n() + 1) * n_bodies * dim);
        Self {
            grid,
            n_bodies,
            dim,
            values,
        }
    }

    pub fn node(&self, k: usize) -> &[T] {
        let b = self.block();
        &self.values[k * b..(k + 1) * b]
    }

    pub fn node_config(&self, k: usize) -> Configuration<T> {
        Configuration::from_flat(self.n_bodies, self.dim, self.node(k).to_vec()).expect("shape")
    }

    /// φ(t) by linear interpolation; constant beyond T_max.
    pub fn at(&self, t: T) -> Configuration<T> {
        if t >= self.grid.t_max() {
            return self.node_config(self.grid.n());
        }
        if t <= T::one() {
            return self.node_config(0);
        }
        let k = self.grid.cell_of(t);
        let s = (t - self.grid.t(k)) / self.grid.dt(k);
        let (p, q) = (self.node(k), self.node(k + 1));
        let v = p.iter().zip(q).map(|(&a, &b)| a + s * (b - a)).collect();
        Configuration::from_flat(self.n_bodies, self.dim, v).expect("shape")
    }

    pub fn scaled(&self, c: T) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// Discrete ‖φ‖_D = sqrt(Σ_k ‖φ_{k+1} − φ_k‖²_𝓜/Δ_k).
    pub fn path_norm(&self, sys: &MassSystem<T>) -> T {
        let b = self.block();
        let mut s = T::zero();
        let mut diff = vec![T::zero(); b];
        for k in 0..self.grid.n() {
            for (q, dq) in diff.iter_mut().enumerate() {
                *dq = self.values[(k + 1) * b + q] - self.values[k * b + q];
            }
            s += sys.mass_inner_unchecked(&diff, &diff) / self.grid.dt(k);
        }
        s.sqrt()
    }

    pub fn hardy_check(&self, sys: &MassSystem<T>) -> HardyCheck<T> {
        let b = self.block();
        let mut lhs = T::zero();
        let mut sup = T::zero();
        let mut av = vec![T::zero(); b];
        let mut bv = vec![T::zero(); b];
        for k in 0..self.grid.n() {
            let (t0, t1) = (self.grid.t(k), self.grid.t(k + 1));
            let dt = t1 - t0;
            // φ(t) = A + B t on the cell
            for q in 0..b {
                let p0 = self.values[k * b + q];
                let p1 = self.values[(k + 1) * b + q];
                bv[q] = (p1 - p0) / dt;
                av[q] = p0 - t0 * bv[q];
            }
            let aa = sys.mass_inner_unchecked(&av, &av);
            let ab = sys.mass_inner_unchecked(&av, &bv);
            let bb = sys.mass_inner_unchecked(&bv, &bv);
            let cell = aa * (T::one() / t0 - T::one() / t1) + lit::<T>(2.0) * ab * (t1 / t0).ln() + bb * dt;
            lhs += cell.max(T::zero());
            let node = &self.values[(k + 1) * b..(k + 2) * b];
            sup = sup.max(sys.mass_inner_unchecked(node, node) / (t1 - T::one()));
        }
        let d2 = self.path_norm(sys).powi(2);
        let rhs = lit::<T>(4.0) * d2;
        let slack = T::one() + lit(1e-9);
        HardyCheck {
            lhs,
            rhs,
            sup_lhs: sup,
            sup_rhs: d2,
            ok: lhs <= rhs * slack && sup <= d2 * slack,
        }
    }

    /// Piecewise-linear interpolation onto `grid` (constant beyond the old
    /// T_max), re-projected.
    pub fn resample(&self, grid: TimeGrid<T>, sys: &MassSystem<T>) -> Result<Self> {
        if grid.nodes() == self.grid.nodes() {
            return Ok(Self { grid, ..self.clone() });
        }
        let mut v = Vec::with_capacity((grid.n() + 1) * self.block());
        for &t in grid.nodes() {
            v.extend_from_slice(self.at(t).as_slice());
        }
        Self::from_raw(grid, sys, v)
    }
}
