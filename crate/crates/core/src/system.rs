//! Masses, the mass metric and the Newtonian potential.

use serde::{Deserialize, Serialize};

use crate::configuration::Configuration;
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// The static problem: N positive masses in dimension d (G = 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassSystem<T> {
    masses: Vec<T>,
    dim: usize,
    total_mass: T,
    /// Collision threshold relative to the RMS coordinate magnitude.
    collision_eps: T,
    /// Barycenter tolerance relative to the RMS coordinate magnitude.
    atol_com: T,
}

impl<T: Real> MassSystem<T> {
    pub fn new(masses: Vec<T>, dim: usize) -> Result<Self> {
        if masses.len() < 2 {
            return Err(Error::DegenerateSystem(format!(
                "need at least 2 bodies, got {}",
                masses.len()
            )));
        }
        if dim < 2 {
            return Err(Error::InvalidSystem(format!("dimension must be >= 2, got {dim}")));
        }
        for (i, &m) in masses.iter().enumerate() {
            if !m.is_finite() || m <= T::zero() {
                return Err(Error::InvalidSystem(format!(
                    "mass {} must be positive and finite, got {m}",
                    i + 1
                )));
            }
        }
        let total_mass = masses.iter().copied().sum();
        Ok(Self {
            masses,
            dim,
            total_mass,
            collision_eps: lit(1e-14),
            atol_com: lit(1e-12),
        })
    }

    pub fn equal(n: usize, dim: usize) -> Result<Self> {
        Self::new(vec![T::one(); n], dim)
    }

    pub fn with_tolerances(mut self, collision_eps: T, atol_com: T) -> Self {
        self.collision_eps = collision_eps;
        self.atol_com = atol_com;
        self
    }

    #[inline]
    pub fn n_bodies(&self) -> usize {
        self.masses.len()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn masses(&self) -> &[T] {
        &self.masses
    }

    #[inline]
    pub fn mass(&self, i: usize) -> T {
        self.masses[i]
    }

    #[inline]
    pub fn total_mass(&self) -> T {
        self.total_mass
    }

    pub fn collision_eps(&self) -> T {
        self.collision_eps
    }

    /// Sub-system made of the listed bodies, in the given order.
    pub fn subsystem(&self, idx: &[usize]) -> Result<Self> {
        let m = idx.iter().map(|&i| self.masses[i]).collect();
        Ok(Self::new(m, self.dim)?.with_tolerances(self.collision_eps, self.atol_com))
    }

    pub fn zeros(&self) -> Configuration<T> {
        Configuration::zeros(self.n_bodies(), self.dim)
    }

    pub fn check_shape(&self, x: &Configuration<T>) -> Result<()> {
        if x.n_bodies() != self.n_bodies() || x.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.n_bodies(), self.dim),
                found: format!("{}x{}", x.n_bodies(), x.dim()),
            });
        }
        Ok(())
    }

    /// Σ mᵢ⟨xᵢ, yᵢ⟩.
    pub fn mass_inner(&self, x: &Configuration<T>, y: &Configuration<T>) -> Result<T> {
        self.check_shape(x)?;
        self.check_shape(y)?;
        Ok(self.mass_inner_unchecked(x.as_slice(), y.as_slice()))
    }

    pub(crate) fn mass_inner_unchecked(&self, x: &[T], y: &[T]) -> T {
        let d = self.dim;
        let mut s = T::zero();
        for (i, &m) in self.masses.iter().enumerate() {
            let mut p = T::zero();
            for c in 0..d {
                p += x[i * d + c] * y[i * d + c];
            }
            s += m * p;
        }
        s
    }

    pub fn mass_norm(&self, x: &Configuration<T>) -> Result<T> {
        Ok(self.mass_inner(x, x)?.sqrt())
    }

    /// Dual norm ‖p‖_{𝓜⁻¹} = sqrt(Σ |pᵢ|²/mᵢ), used for momenta and forces.
    pub fn inverse_mass_norm(&self, p: &Configuration<T>) -> Result<T> {
        self.check_shape(p)?;
        let d = self.dim;
        let mut s = T::zero();
        for (i, &m) in self.masses.iter().enumerate() {
            let b = &p.as_slice()[i * d..(i + 1) * d];
            s += b.iter().map(|&v| v * v).sum::<T>() / m;
        }
        Ok(s.sqrt())
    }

    /// 𝓜x.
    pub fn lower(&self, x: &Configuration<T>) -> Configuration<T> {
        let mut out = x.clone();
        for i in 0..self.n_bodies() {
            let m = self.masses[i];
            out.body_mut(i).iter_mut().for_each(|v| *v *= m);
        }
        out
    }

    /// 𝓜⁻¹p.
    pub fn raise(&self, p: &Configuration<T>) -> Configuration<T> {
        let mut out = p.clone();
        for i in 0..self.n_bodies() {
            let m = self.masses[i];
            out.body_mut(i).iter_mut().for_each(|v| *v /= m);
        }
        out
    }

    /// Mass-weighted barycenter (1/M) Σ mᵢ xᵢ.
    pub fn barycenter(&self, x: &Configuration<T>) -> Vec<T> {
        let d = self.dim;
        let mut c = vec![T::zero(); d];
        for (i, &m) in self.masses.iter().enumerate() {
            for (a, ca) in c.iter_mut().enumerate() {
                *ca += m * x.as_slice()[i * d + a];
            }
        }
        c.iter_mut().for_each(|v| *v /= self.total_mass);
        c
    }

    /// Subtracts the mass-weighted barycenter from every row.
    pub fn project_com(&self, raw: &Configuration<T>) -> Result<Configuration<T>> {
        self.check_shape(raw)?;
        if !raw.is_finite() {
            return Err(Error::NonFinite("configuration"));
        }
        let mut out = raw.clone();
        self.project_com_in_place(out.as_mut_slice());
        Ok(out)
    }

    pub(crate) fn project_com_in_place(&self, x: &mut [T]) {
        let d = self.dim;
        let mut c = vec![T::zero(); d];
        for (i, &m) in self.masses.iter().enumerate() {
            for a in 0..d {
                c[a] += m * x[i * d + a];
            }
        }
        for v in c.iter_mut() {
            *v /= self.total_mass;
        }
        for i in 0..self.n_bodies() {
            for a in 0..d {
                x[i * d + a] -= c[a];
            }
        }
    }

    /// Euclidean-orthogonal projection onto the zero-barycenter subspace:
    /// gᵢ − mᵢ s / Σ mⱼ² with s = Σ mⱼ gⱼ. Maps gradients of functions on
    /// configuration space to their representative inside that space.
    pub(crate) fn project_euclidean_in_place(&self, g: &mut [T]) {
        let d = self.dim;
        let msq: T = self.masses.iter().map(|&m| m * m).sum();
        let mut s = vec![T::zero(); d];
        for (i, &m) in self.masses.iter().enumerate() {
            for a in 0..d {
                s[a] += m * g[i * d + a];
            }
        }
        for (i, &m) in self.masses.iter().enumerate() {
            for a in 0..d {
                g[i * d + a] -= m * s[a] / msq;
            }
        }
    }

    pub fn is_centered(&self, x: &Configuration<T>) -> bool {
        let scale = x.rms_radius().max(T::one());
        let c = self.barycenter(x);
        let nrm = c.iter().map(|&v| v * v).sum::<T>().sqrt() * self.total_mass;
        nrm <= self.atol_com * scale * T::from_usize_lossy(self.n_bodies())
    }

    /// Absolute collision threshold for `x`.
    pub fn collision_threshold(&self, x: &Configuration<T>) -> T {
        self.collision_eps * x.rms_radius()
    }

    /// U(x) = Σ_{i<j} mᵢmⱼ/|xᵢ − xⱼ|.
    pub fn potential(&self, x: &Configuration<T>) -> Result<T> {
        self.check_shape(x)?;
        let thr = self.collision_threshold(x);
        let d = self.dim;
        let xs = x.as_slice();
        let n = self.n_bodies();
        let mut u = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                let r = dist(&xs[i * d..(i + 1) * d], &xs[j * d..(j + 1) * d]);
                if !(r > thr) {
                    return Err(collision(i, j, r));
                }
                u += self.masses[i] * self.masses[j] / r;
            }
        }
        Ok(u)
    }

    /// ∇U(x), block i = −Σ_{j≠i} mᵢmⱼ(xᵢ − xⱼ)/|xᵢ − xⱼ|³.
    pub fn potential_gradient(&self, x: &Configuration<T>) -> Result<Configuration<T>> {
        Ok(self.potential_and_gradient(x)?.1)
    }

    pub fn potential_and_gradient(&self, x: &Configuration<T>) -> Result<(T, Configuration<T>)> {
        self.check_shape(x)?;
        let thr = self.collision_threshold(x);
        let d = self.dim;
        let n = self.n_bodies();
        let xs = x.as_slice();
        let mut g = self.zeros();
        let gs = g.as_mut_slice();
        let mut u = T::zero();
        let mut diff = vec![T::zero(); d];
        for i in 0..n {
            for j in (i + 1)..n {
                let mut r2 = T::zero();
                for a in 0..d {
                    diff[a] = xs[i * d + a] - xs[j * d + a];
                    r2 += diff[a] * diff[a];
                }
                let r = r2.sqrt();
                if !(r > thr) {
                    return Err(collision(i, j, r));
                }
                let mm = self.masses[i] * self.masses[j];
                u += mm / r;
                let f = mm / (r2 * r);
                for a in 0..d {
                    gs[i * d + a] -= f * diff[a];
                    gs[j * d + a] += f * diff[a];
                }
            }
        }
        Ok((u, g))
    }

    /// ∇²U(x)·v assembled pairwise.
    pub fn hessian_apply(&self, x: &Configuration<T>, v: &Configuration<T>) -> Result<Configuration<T>> {
        self.check_shape(x)?;
        self.check_shape(v)?;
        let thr = self.collision_threshold(x);
        let d = self.dim;
        let n = self.n_bodies();
        let xs = x.as_slice();
        let vs = v.as_slice();
        let mut out = self.zeros();
        let os = out.as_mut_slice();
        let three = lit::<T>(3.0);
        let mut r = vec![T::zero(); d];
        let mut dv = vec![T::zero(); d];
        for i in 0..n {
            for j in (i + 1)..n {
                let mut r2 = T::zero();
                for a in 0..d {
                    r[a] = xs[i * d + a] - xs[j * d + a];
                    dv[a] = vs[i * d + a] - vs[j * d + a];
                    r2 += r[a] * r[a];
                }
                let rn = r2.sqrt();
                if !(rn > thr) {
                    return Err(collision(i, j, rn));
                }
                let mm = self.masses[i] * self.masses[j];
                let r3 = r2 * rn;
                let rdv: T = (0..d).map(|a| r[a] * dv[a]).sum();
                // B (vᵢ − vⱼ) with B = mᵢmⱼ (3 r rᵀ/|r|⁵ − I/|r|³)
                for a in 0..d {
                    let b = mm * (three * r[a] * rdv / (r3 * r2) - dv[a] / r3);
                    os[i * d + a] += b;
                    os[j * d + a] -= b;
                }
            }
        }
        Ok(out)
    }

    /// Dense Nd×Nd Hessian of U, row-major.
    pub fn hessian_matrix(&self, x: &Configuration<T>) -> Result<Vec<T>> {
        let nd = self.n_bodies() * self.dim;
        let mut h = vec![T::zero(); nd * nd];
        let mut e = self.zeros();
        for k in 0..nd {
            e.as_mut_slice()[k] = T::one();
            let col = self.hessian_apply(x, &e)?;
            for (r, &v) in col.as_slice().iter().enumerate() {
                h[r * nd + k] = v;
            }
            e.as_mut_slice()[k] = T::zero();
        }
        Ok(h)
    }

    /// (min, max) pairwise distance.
    pub fn separations(&self, x: &Configuration<T>) -> (T, T) {
        let d = self.dim;
        let n = self.n_bodies();
        let xs = x.as_slice();
        let mut lo = T::infinity();
        let mut hi = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                let r = dist(&xs[i * d..(i + 1) * d], &xs[j * d..(j + 1) * d]);
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        (lo, hi)
    }

    /// ½‖v‖²_𝓜.
    pub fn kinetic(&self, v: &Configuration<T>) -> Result<T> {
        Ok(lit::<T>(0.5) * self.mass_inner(v, v)?)
    }

    /// h = ½‖v‖²_𝓜 − U(x).
    pub fn energy(&self, x: &Configuration<T>, v: &Configuration<T>) -> Result<T> {
        Ok(self.kinetic(v)? - self.potential(x)?)
    }

    /// Total linear momentum Σ mᵢvᵢ.
    pub fn momentum(&self, v: &Configuration<T>) -> Vec<T> {
        let mut p = self.barycenter(v);
        p.iter_mut().for_each(|c| *c *= self.total_mass);
        p
    }

    /// Acceleration 𝓜⁻¹∇U(x).
    pub fn acceleration(&self, x: &Configuration<T>) -> Result<Configuration<T>> {
        Ok(self.raise(&self.potential_gradient(x)?))
    }
}

#[inline]
pub(crate) fn dist<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s.sqrt()
}

fn collision<T: Real>(i: usize, j: usize, r: T) -> Error {
    Error::Collision {
        i,
        j,
        separation: r.f64(),
        t: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg(rows: &[[f64; 2]]) -> Configuration<f64> {
        Configuration::from_rows(rows).unwrap()
    }

    fn triangle(side: f64) -> Configuration<f64> {
        let r = side / 3f64.sqrt();
        let rows: Vec<[f64; 2]> = (0..3)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / 3.0;
                [r * th.cos(), r * th.sin()]
            })
            .collect();
        cfg(&rows)
    }

    #[test]
    fn mass_inner_examples() {
        let s = MassSystem::equal(2, 2).unwrap();
        let x = cfg(&[[1.0, 0.0], [-1.0, 0.0]]);
        assert_eq!(s.mass_inner(&x, &x).unwrap(), 2.0);
        assert_eq!(s.mass_inner(&x, &s.zeros()).unwrap(), 0.0);
        let s = MassSystem::new(vec![2.0, 3.0], 2).unwrap();
        let x = cfg(&[[1.0, 0.0], [0.0, 1.0]]);
        let y = cfg(&[[1.0, 0.0], [0.0, 2.0]]);
        assert_eq!(s.mass_inner(&x, &y).unwrap(), 8.0);
        let bad = Configuration::zeros(3, 2);
        assert!(matches!(s.mass_inner(&x, &bad), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn project_com_examples() {
        let s = MassSystem::equal(2, 2).unwrap();
        let p = s.project_com(&cfg(&[[2.0, 0.0], [0.0, 0.0]])).unwrap();
        assert_eq!(p, cfg(&[[1.0, 0.0], [-1.0, 0.0]]));
        assert_eq!(s.project_com(&p).unwrap(), p);
        let s = MassSystem::new(vec![1.0, 3.0], 2).unwrap();
        let p = s.project_com(&cfg(&[[4.0, 0.0], [0.0, 0.0]])).unwrap();
        assert_eq!(p, cfg(&[[3.0, 0.0], [-1.0, 0.0]]));
        let nan = cfg(&[[f64::NAN, 0.0], [0.0, 0.0]]);
        assert!(matches!(s.project_com(&nan), Err(Error::NonFinite(_))));
    }

    #[test]
    fn potential_examples() {
        let s = MassSystem::equal(2, 2).unwrap();
        assert_eq!(s.potential(&cfg(&[[0.5, 0.0], [-0.5, 0.0]])).unwrap(), 1.0);
        let s3 = MassSystem::equal(3, 2).unwrap();
        assert_relative_eq!(s3.potential(&triangle(1.0)).unwrap(), 3.0, max_relative = 1e-14);
        let r = s.potential(&cfg(&[[0.3, 0.1], [0.3, 0.1]]));
        assert!(matches!(r, Err(Error::Collision { i: 0, j: 1, .. })));
    }

    #[test]
    fn gradient_examples() {
        let s = MassSystem::equal(2, 2).unwrap();
        let x = cfg(&[[0.5, 0.0], [-0.5, 0.0]]);
        let g = s.potential_gradient(&x).unwrap();
        assert_eq!(g, cfg(&[[-1.0, 0.0], [1.0, 0.0]]));
        let g2 = s.potential_gradient(&x.scaled(2.0)).unwrap();
        assert_eq!(g2, g.scaled(0.25));
    }

    #[test]
    fn energy_examples() {
        let s = MassSystem::equal(2, 2).unwrap();
        let x = cfg(&[[0.5, 0.0], [-0.5, 0.0]]);
        assert_eq!(s.energy(&x, &s.zeros()).unwrap(), -1.0);
        // ‖v‖² = 2U = 2 gives h = 0
        let v = cfg(&[[0.0, 1.0], [0.0, -1.0]]);
        assert_eq!(s.energy(&x, &v).unwrap(), 0.0);
    }

    #[test]
    fn separations_examples() {
        let s = MassSystem::equal(2, 2).unwrap();
        assert_eq!(s.separations(&cfg(&[[0.5, 0.0], [-0.5, 0.0]])), (1.0, 1.0));
        let s3 = MassSystem::equal(3, 2).unwrap();
        assert_eq!(
            s3.separations(&cfg(&[[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])),
            (1.0, 3.0)
        );
        let (lo, hi) = s3.separations(&triangle(2.5));
        assert_relative_eq!(lo, 2.5, max_relative = 1e-14);
        assert_relative_eq!(hi, 2.5, max_relative = 1e-14);
    }

    #[test]
    fn hessian_zero_direction() {
        let s = MassSystem::equal(3, 2).unwrap();
        let h = s.hessian_apply(&triangle(1.0), &s.zeros()).unwrap();
        assert_eq!(h.max_abs(), 0.0);
    }

    #[test]
    fn works_in_single_precision() {
        let s = MassSystem::<f32>::equal(2, 3).unwrap();
        let x = Configuration::from_rows(&[[0.5f32, 0.0, 0.0], [-0.5, 0.0, 0.0]]).unwrap();
        assert_eq!(s.potential(&x).unwrap(), 1.0f32);
    }

    fn arb_system_and_config() -> impl Strategy<Value = (MassSystem<f64>, Configuration<f64>)> {
        (2usize..6, 2usize..4).prop_flat_map(|(n, d)| {
            (
                proptest::collection::vec(0.1f64..5.0, n),
                proptest::collection::vec(-3.0f64..3.0, n * d),
            )
                .prop_filter_map("collision-free", move |(m, xs)| {
                    let s = MassSystem::new(m, d).unwrap();
                    let x = s.project_com(&Configuration::from_flat(n, d, xs).unwrap()).unwrap();
                    (s.separations(&x).0 > 0.05).then_some((s, x))
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn euler_identity((s, x) in arb_system_and_config()) {
            let (u, g) = s.potential_and_gradient(&x).unwrap();
            let lhs = g.dot(&x);
            prop_assert!(((lhs + u) / u).abs() <= 1e-12);
        }

        #[test]
        fn homogeneity((s, x) in arb_system_and_config(), lam in 0.2f64..5.0) {
            let u = s.potential(&x).unwrap();
            let ul = s.potential(&x.scaled(lam)).unwrap();
            prop_assert!((ul - u / lam).abs() <= 1e-12 * u / lam);
            let g = s.potential_gradient(&x).unwrap();
            let gl = s.potential_gradient(&x.scaled(lam)).unwrap();
            let diff = gl.sub(&g.scaled(lam.powi(-2))).norm();
            prop_assert!(diff <= 1e-12 * g.norm() * lam.powi(-2));
            let v = x.map(|c| (c * 7.3).sin());
            let h = s.hessian_apply(&x, &v).unwrap();
            let hl = s.hessian_apply(&x.scaled(lam), &v).unwrap();
            let diff = hl.sub(&h.scaled(lam.powi(-3))).norm();
            prop_assert!(diff <= 1e-11 * h.norm() * lam.powi(-3));
        }

        #[test]
        fn gradient_matches_finite_differences((s, x) in arb_system_and_config()) {
            let g = s.potential_gradient(&x).unwrap();
            let h = 1e-6;
            let mut fd = s.zeros();
            for k in 0..x.as_slice().len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp.as_mut_slice()[k] += h;
                xm.as_mut_slice()[k] -= h;
                fd.as_mut_slice()[k] =
                    (s.potential(&xp).unwrap() - s.potential(&xm).unwrap()) / (2.0 * h);
            }
            let err = fd.sub(&g).norm() / g.norm();
            prop_assert!(err <= 1e-6, "relative error {err}");
        }

        #[test]
        fn hessian_matches_second_differences((s, x) in arb_system_and_config()) {
            let v = s.project_com(&x.map(|c| (3.1 * c).cos())).unwrap();
            let v = v.scaled(1.0 / v.norm());
            let h = 1e-4;
            let up = s.potential(&x.add(&v.scaled(h))).unwrap();
            let um = s.potential(&x.sub(&v.scaled(h))).unwrap();
            let u0 = s.potential(&x).unwrap();
            let fd = (up - 2.0 * u0 + um) / (h * h);
            let exact = s.hessian_apply(&x, &v).unwrap().dot(&v);
            // second differences lose about eps·U/h² to rounding
            let floor = 4.0 * f64::EPSILON * u0 / (h * h);
            prop_assert!((fd - exact).abs() <= 1e-5 * exact.abs() + floor,
                "fd {fd} exact {exact}");
        }

        #[test]
        fn hessian_symmetric((s, x) in arb_system_and_config()) {
            let v = x.map(|c| (1.7 * c).sin());
            let w = x.map(|c| (0.9 * c + 0.3).cos());
            let hv = s.hessian_apply(&x, &v).unwrap();
            let hw = s.hessian_apply(&x, &w).unwrap();
            let a = hv.dot(&w);
            let b = hw.dot(&v);
            prop_assert!((a - b).abs() <= 1e-12 * (hv.norm() * w.norm()).max(1e-300));
        }

        #[test]
        fn kinetic_identity((s, x) in arb_system_and_config()) {
            let v = s.project_com(&x.map(|c| (2.3 * c).sin() + 0.4)).unwrap();
            let lhs = s.mass_inner(&v, &v).unwrap();
            let n = s.n_bodies();
            let mut rhs = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    let dv = dist(v.body(i), v.body(j));
                    rhs += s.mass(i) * s.mass(j) * dv * dv;
                }
            }
            rhs /= s.total_mass();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1e-300));
        }

        #[test]
        fn projection_idempotent_and_translation_free(
            (s, x) in arb_system_and_config(),
            shift in proptest::collection::vec(-10.0f64..10.0, 3),
        ) {
            let d = s.dim();
            let mut shifted = x.clone();
            for i in 0..s.n_bodies() {
                for a in 0..d {
                    shifted.body_mut(i)[a] += shift[a];
                }
            }
            let p = s.project_com(&shifted).unwrap();
            prop_assert!(s.is_centered(&p));
            prop_assert!(p.sub(&x).max_abs() <= 1e-12 * (1.0 + x.max_abs() + 10.0));
            let p2 = s.project_com(&p).unwrap();
            prop_assert!(p2.sub(&p).max_abs() <= 1e-14 * (1.0 + p.max_abs()));
            let mut c = s.zeros();
            for i in 0..s.n_bodies() {
                c.body_mut(i).copy_from_slice(&shift[..d]);
            }
            prop_assert!(s.mass_inner(&p, &c).unwrap().abs() <= 1e-10 * (1.0 + p.norm() * c.norm()));
        }
    }
}
