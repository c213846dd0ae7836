//! Reduced two-body propagation in universal variables.
//!
//! x = r₁ − r₂ obeys ẍ = −μx/|x|³ with μ = m₁ + m₂. The universal anomaly χ
//! solves a monotone scalar equation (its derivative is r > 0), so Newton's
//! method is safeguarded by a bracket.

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Stumpff functions C(z), S(z).
pub fn stumpff<T: Real>(z: T) -> (T, T) {
    if z.abs() < lit(1e-3) {
        // series to z⁴
        let c = lit::<T>(0.5) - z / lit(24.0) + z * z / lit(720.0) - z * z * z / lit(40320.0) + z * z * z * z / lit(3628800.0);
        let s = lit::<T>(1.0 / 6.0) - z / lit(120.0) + z * z / lit(5040.0) - z * z * z / lit(362880.0)
            + z * z * z * z / lit(39916800.0);
        (c, s)
    } else if z > T::zero() {
        let w = z.sqrt();
        ((T::one() - w.cos()) / z, (w - w.sin()) / (w * w * w))
    } else {
        let w = (-z).sqrt();
        ((w.cosh() - T::one()) / (-z), (w.sinh() - w) / (w * w * w))
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Propagates the relative state (x, v) of bodies with masses m₁, m₂ over
/// elapsed time `t` (may be negative).
pub fn kepler_oracle<T: Real>(m1: T, m2: T, x0: &[T], v0: &[T], t: T) -> Result<(Vec<T>, Vec<T>)> {
    if x0.len() != v0.len() || x0.len() < 2 {
        return Err(Error::DimensionMismatch {
            expected: "two vectors of equal dimension >= 2".into(),
            found: format!("{} and {}", x0.len(), v0.len()),
        });
    }
    if !(m1 > T::zero() && m2 > T::zero()) {
        return Err(Error::InvalidInput("masses must be positive".into()));
    }
    let mu = m1 + m2;
    let smu = mu.sqrt();
    let r0 = dot(x0, x0).sqrt();
    if !(r0 > T::zero()) {
        return Err(Error::InvalidInput("zero separation".into()));
    }
    let vr0 = dot(x0, v0) / r0;
    let alpha = lit::<T>(2.0) / r0 - dot(v0, v0) / mu;
    let sigma = r0 * vr0 / smu;
    let one_ar = T::one() - alpha * r0;
    let target = smu * t;
    // F(χ) = σχ²C + (1 − αr₀)χ³S + r₀χ − √μ t, F' = r(χ)
    let eval = |chi: T| -> (T, T) {
        let z = alpha * chi * chi;
        let (c, s) = stumpff(z);
        let f = sigma * chi * chi * c + one_ar * chi * chi * chi * s + r0 * chi - target;
        let df = sigma * chi * (T::one() - z * s) + one_ar * chi * chi * c + r0;
        (f, df)
    };
    if t == T::zero() {
        return Ok((x0.to_vec(), v0.to_vec()));
    }
    // F is increasing and F(0) = −√μ t, so the root has the sign of t
    let mut step = (smu * t.abs() / r0).min(T::one()).max(lit(1e-3));
    let (mut lo, mut hi) = (T::zero(), T::zero());
    loop {
        let probe = if t > T::zero() { hi + step } else { lo - step };
        let (f, _) = eval(probe);
        if !f.is_finite() {
            return Err(Error::ConvergenceFailure("universal anomaly bracket overflow".into()));
        }
        if t > T::zero() {
            if f >= T::zero() {
                hi = probe;
                break;
            }
            lo = probe;
            hi = probe;
        } else {
            if f <= T::zero() {
                lo = probe;
                break;
            }
            lo = probe;
            hi = probe;
        }
        step *= lit(2.0);
    }
    if t > T::zero() {
        lo = hi - step;
    } else {
        hi = lo + step;
    }
    let mut chi = lit::<T>(0.5) * (lo + hi);
    let tol = lit::<T>(1e-15);
    let mut done = false;
    for _ in 0..200 {
        let (f, df) = eval(chi);
        if f < T::zero() {
            lo = chi;
        } else {
            hi = chi;
        }
        let mut next = chi - f / df;
        if !(next > lo && next < hi) {
            next = lit::<T>(0.5) * (lo + hi);
        }
        let delta = (next - chi).abs();
        chi = next;
        if delta <= tol * (T::one() + chi.abs()) || hi - lo <= tol * (T::one() + chi.abs()) {
            done = true;
            break;
        }
    }
    if !done {
        return Err(Error::ConvergenceFailure(format!("universal anomaly did not converge for t = {}", t.f64())));
    }
    let z = alpha * chi * chi;
    let (c, s) = stumpff(z);
    let f = T::one() - chi * chi / r0 * c;
    let g = t - chi * chi * chi / smu * s;
    let x: Vec<T> = x0.iter().zip(v0).map(|(&a, &b)| f * a + g * b).collect();
    let r = dot(&x, &x).sqrt();
    let fd = smu / (r * r0) * (z * chi * s - chi);
    let gd = T::one() - chi * chi / r * c;
    let v = x0.iter().zip(v0).map(|(&a, &b)| fd * a + gd * b).collect();
    Ok((x, v))
}

/// Relative energy v²/2 − μ/r.
pub fn relative_energy<T: Real>(m1: T, m2: T, x: &[T], v: &[T]) -> T {
    lit::<T>(0.5) * dot(v, v) - (m1 + m2) / dot(x, x).sqrt()
}

/// Asymptotic relative velocity lim ẋ of an unbound orbit, from the energy
/// and the Laplace–Runge–Lenz vector.
pub fn asymptotic_velocity<T: Real>(m1: T, m2: T, x: &[T], v: &[T]) -> Result<Vec<T>> {
    let mu = m1 + m2;
    let en = relative_energy(m1, m2, x, v);
    if !(en > T::zero()) {
        return Err(Error::InvalidInput("orbit is bound or parabolic".into()));
    }
    let vinf = (lit::<T>(2.0) * en).sqrt();
    let r = dot(x, x).sqrt();
    let xv = dot(x, v);
    let v2 = dot(v, v);
    let e: Vec<T> = x.iter().zip(v).map(|(&a, &b)| ((v2 - mu / r) * a - xv * b) / mu).collect();
    let ecc = dot(&e, &e).sqrt();
    // angular momentum magnitude |x ∧ v|
    let h2 = (dot(x, x) * v2 - xv * xv).max(T::zero());
    if h2.sqrt() <= lit::<T>(1e-14) * r * v2.sqrt() || ecc <= T::one() {
        let s = if xv >= T::zero() { T::one() } else { -T::one() };
        return Ok(x.iter().map(|&a| s * vinf * a / r).collect());
    }
    let eh: Vec<T> = e.iter().map(|&a| a / ecc).collect();
    // in-plane unit vector a quarter turn ahead of ê in the sense of motion
    let ex = dot(&eh, x);
    let ev = dot(&eh, v);
    let q: Vec<T> = x.iter().zip(v).map(|(&a, &b)| ex * b - ev * a).collect();
    let qn = dot(&q, &q).sqrt();
    let cos = -T::one() / ecc;
    let sin = (T::one() - cos * cos).sqrt();
    Ok(eh.iter().zip(&q).map(|(&a, &b)| vinf * (cos * a + sin * b / qn)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cross2(x: &[f64], v: &[f64]) -> f64 {
        x[0] * v[1] - x[1] * v[0]
    }

    #[test]
    fn stumpff_continuity() {
        for z in [1e-3f64, -1e-3] {
            let (c1, s1) = stumpff(z * 0.999_999);
            let (c2, s2) = stumpff(z * 1.000_001);
            assert!((c1 - c2).abs() < 1e-9 && (s1 - s2).abs() < 1e-9);
        }
        let (c, s) = stumpff(0.0f64);
        assert_eq!((c, s), (0.5, 1.0 / 6.0));
    }

    #[test]
    fn circular_orbit_keeps_radius() {
        // μ = 2, r = 2 → speed 1
        let x0: [f64; 2] = [2.0, 0.0];
        let v0 = [0.0, 1.0];
        for &t in &[0.3, 1.0, 7.5, 100.0, 1234.5] {
            let (x, v) = kepler_oracle(1.0, 1.0, &x0, &v0, t).unwrap();
            assert!(((x[0] * x[0] + x[1] * x[1]).sqrt() - 2.0).abs() <= 1e-12 * 2.0, "{t}");
            assert_relative_eq!(x[0], 2.0 * (0.5 * t).cos(), epsilon = 1e-10);
            assert_relative_eq!(v[1], (0.5 * t).cos(), epsilon = 1e-10);
        }
    }

    #[test]
    fn conservation_on_all_conic_types() {
        for (x0, v0) in [
            ([1.0, 0.2], [0.3, 1.1]),
            ([2.0, -1.0], [0.1, 0.4]),
            ([1.0, 0.0], [0.0, 2.0]),
            ([1.0, 0.0], [1.5, 1.2]),
        ] {
            let e0 = relative_energy(1.0, 1.0, &x0, &v0);
            let h0 = cross2(&x0, &v0);
            for &t in &[0.5, 3.0, 40.0, 1e3, -2.0] {
                let (x, v) = kepler_oracle(1.0, 1.0, &x0, &v0, t).unwrap();
                let e = relative_energy(1.0, 1.0, &x, &v);
                assert!((e - e0).abs() <= 1e-11 * (1.0 + e0.abs()), "{t}: {e} vs {e0}");
                assert!((cross2(&x, &v) - h0).abs() <= 1e-11 * (1.0 + h0.abs()));
            }
        }
    }

    #[test]
    fn round_trip_in_time() {
        let x0 = [1.0, 0.5];
        let v0 = [1.3, 0.9];
        let (x, v) = kepler_oracle(1.0, 2.0, &x0, &v0, 50.0).unwrap();
        let (xb, vb) = kepler_oracle(1.0, 2.0, &x, &v, -50.0).unwrap();
        for i in 0..2 {
            assert_relative_eq!(xb[i], x0[i], epsilon = 1e-9);
            assert_relative_eq!(vb[i], v0[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn radial_parabolic_escape_matches_closed_form() {
        // r(t) = (9μ/2)^{1/3} (t + t₀)^{2/3} with μ = 2, t₀ = 1
        let mu = 2.0f64;
        let k = (4.5 * mu).cbrt();
        let r0 = k;
        let v0 = (2.0 * mu / r0).sqrt();
        let x0 = [r0, 0.0];
        let vv = [v0, 0.0];
        let ts: Vec<f64> = (0..20).map(|i| 10f64.powf(1.0 + 3.0 * i as f64 / 19.0)).collect();
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for &t in &ts {
            let (x, _) = kepler_oracle(1.0, 1.0, &x0, &vv, t).unwrap();
            let r = x[0].hypot(x[1]);
            assert_relative_eq!(r, k * (t + 1.0).powf(2.0 / 3.0), max_relative = 1e-10);
            let (lx, ly) = ((t + 1.0).ln(), r.ln());
            sx += lx;
            sy += ly;
            sxx += lx * lx;
            sxy += lx * ly;
        }
        let n = ts.len() as f64;
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!((slope - 2.0 / 3.0).abs() <= 1e-3);
    }

    #[test]
    fn asymptotic_velocity_is_the_limit() {
        let x0: [f64; 2] = [1.0, 0.3];
        let v0 = [1.5, 1.4];
        let vinf = asymptotic_velocity(1.0, 1.0, &x0, &v0).unwrap();
        let (_, v) = kepler_oracle(1.0, 1.0, &x0, &v0, 1e9).unwrap();
        for i in 0..2 {
            assert!((v[i] - vinf[i]).abs() <= 1e-7, "{v:?} {vinf:?}");
        }
        // clockwise motion
        let vinf = asymptotic_velocity(1.0, 1.0, &x0, &[1.5, -1.4]).unwrap();
        let (_, v) = kepler_oracle(1.0, 1.0, &x0, &[1.5, -1.4], 1e9).unwrap();
        for i in 0..2 {
            assert!((v[i] - vinf[i]).abs() <= 1e-7);
        }
    }

    #[test]
    fn three_dimensional_orbit_agrees_with_integrator() {
        use crate::configuration::Configuration;
        use crate::ode::{integrate_nbody, OdeOptions};
        use crate::system::MassSystem;
        let sys = MassSystem::new(vec![1.0, 3.0], 3).unwrap();
        let xr: [f64; 3] = [1.0, 0.2, -0.3];
        let vr = [0.4, 1.2, 0.5];
        // split into bodies with zero barycenter and zero momentum
        let x = Configuration::from_rows(&[
            [0.75 * xr[0], 0.75 * xr[1], 0.75 * xr[2]],
            [-0.25 * xr[0], -0.25 * xr[1], -0.25 * xr[2]],
        ])
        .unwrap();
        let v = Configuration::from_rows(&[
            [0.75 * vr[0], 0.75 * vr[1], 0.75 * vr[2]],
            [-0.25 * vr[0], -0.25 * vr[1], -0.25 * vr[2]],
        ])
        .unwrap();
        let flow = integrate_nbody(&sys, &x, &v, 0.0, 20.0, &OdeOptions::default()).unwrap();
        for &t in &[1.0, 5.5, 20.0] {
            let (xt, _) = flow.state(t).unwrap();
            let (k, _) = kepler_oracle(1.0, 3.0, &xr, &vr, t).unwrap();
            for q in 0..3 {
                assert!((xt.body(0)[q] - xt.body(1)[q] - k[q]).abs() <= 1e-8, "{t}");
            }
        }
    }
}
