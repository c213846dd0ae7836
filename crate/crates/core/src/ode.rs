//! Adaptive Dormand–Prince 5(4) integration of 𝓜ẍ = ∇U(x).

use serde::{Deserialize, Serialize};

use crate::configuration::Configuration;
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};
use crate::system::MassSystem;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-12,
            atol: 1e-12,
            max_steps: 2_000_000,
        }
    }
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// b − b̂ (fifth minus embedded fourth order weights).
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Accepted steps of one integration: (t, y, y') at every step boundary.
#[derive(Clone, Debug)]
pub struct Solution<T> {
    pub t: Vec<T>,
    pub y: Vec<Vec<T>>,
    pub dy: Vec<Vec<T>>,
}

/// Integrates y' = f(t, y) from t0 to t1 > t0.
pub fn dopri5<T: Real>(
    mut f: impl FnMut(T, &[T], &mut [T]) -> Result<()>,
    t0: T,
    y0: &[T],
    t1: T,
    opts: &OdeOptions,
) -> Result<Solution<T>> {
    if !(t1 > t0) {
        return Err(Error::InvalidInput("integration interval must be increasing".into()));
    }
    let n = y0.len();
    let rtol = lit::<T>(opts.rtol);
    let atol = lit::<T>(opts.atol);
    let mut k: Vec<Vec<T>> = vec![vec![T::zero(); n]; 7];
    let mut y = y0.to_vec();
    let mut t = t0;
    f(t, &y, &mut k[0])?;
    let mut sol = Solution {
        t: vec![t],
        y: vec![y.clone()],
        dy: vec![k[0].clone()],
    };
    let scale = |y: &[T], i: usize| atol + rtol * y[i].abs();
    // initial step from the ratio of y to y'
    let rms = |v: &[T], y: &[T]| -> T {
        let s: T = v.iter().enumerate().map(|(i, &x)| (x / scale(y, i)).powi(2)).sum();
        (s / T::from_usize_lossy(n.max(1))).sqrt()
    };
    let d0 = rms(&y, &y);
    let d1 = rms(&k[0], &y);
    let mut h = if d0 < lit(1e-5) || d1 < lit(1e-5) { lit::<T>(1e-6) } else { lit::<T>(0.01) * d0 / d1 };
    h = h.min(t1 - t0);
    let mut ytmp = vec![T::zero(); n];
    let mut ynew = vec![T::zero(); n];
    let mut steps = 0;
    let safety = lit::<T>(0.9);
    let fifth = lit::<T>(0.2);
    while t < t1 {
        if steps >= opts.max_steps {
            return Err(Error::IntegratorFailure {
                t: t.f64(),
                reason: "step budget exhausted".into(),
            });
        }
        if h <= T::epsilon() * lit::<T>(16.0) * t.abs().max(T::one()) {
            return Err(Error::IntegratorFailure {
                t: t.f64(),
                reason: "step size underflow".into(),
            });
        }
        let last = t + h >= t1;
        if last {
            h = t1 - t;
        }
        for s in 1..7 {
            for i in 0..n {
                let mut acc = T::zero();
                for j in 0..s {
                    acc += T::lit(A[s][j]) * k[j][i];
                }
                ytmp[i] = y[i] + h * acc;
            }
            let (lo, hi) = k.split_at_mut(s);
            let _ = lo;
            let ts = t + T::lit(C[s]) * h;
            match f(ts, &ytmp, &mut hi[0]) {
                Ok(()) => {}
                Err(Error::Collision { .. }) | Err(Error::NonFinite(_)) => {
                    // treat as a rejected step
                    hi[0].iter_mut().for_each(|v| *v = T::nan());
                }
                Err(e) => return Err(e),
            }
        }
        // the last stage is evaluated at y_new (FSAL)
        ynew.copy_from_slice(&ytmp);
        let mut err = T::zero();
        for i in 0..n {
            let mut e = T::zero();
            for s in 0..7 {
                e += T::lit(E[s]) * k[s][i];
            }
            let sc = atol + rtol * y[i].abs().max(ynew[i].abs());
            err += (h * e / sc).powi(2);
        }
        err = (err / T::from_usize_lossy(n.max(1))).sqrt();
        steps += 1;
        if err.is_finite() && err <= T::one() {
            t = if last { t1 } else { t + h };
            std::mem::swap(&mut y, &mut ynew);
            let k6 = k[6].clone();
            k[0].copy_from_slice(&k6);
            sol.t.push(t);
            sol.y.push(y.clone());
            sol.dy.push(k6);
            let fac = if err == T::zero() { lit(5.0) } else { safety * err.powf(-fifth) };
            h *= fac.max(lit(0.2)).min(lit(5.0));
        } else {
            let fac = if err.is_finite() { safety * err.powf(-fifth) } else { lit(0.1) };
            h *= fac.max(lit(0.1)).min(lit(0.9));
        }
    }
    Ok(sol)
}

/// Solution of the N-body equations with dense output.
#[derive(Clone, Debug)]
pub struct NBodyFlow<T: Real> {
    sys: MassSystem<T>,
    sol: Solution<T>,
}

/// Integrates 𝓜ẍ = ∇U(x) from (x0, v0) at t0 up to t1.
pub fn integrate_nbody<T: Real>(
    sys: &MassSystem<T>,
    x0: &Configuration<T>,
    v0: &Configuration<T>,
    t0: T,
    t1: T,
    opts: &OdeOptions,
) -> Result<NBodyFlow<T>> {
    sys.check_shape(x0)?;
    sys.check_shape(v0)?;
    let nd = x0.as_slice().len();
    let (nb, d) = (sys.n_bodies(), sys.dim());
    let mut y0 = x0.as_slice().to_vec();
    y0.extend_from_slice(v0.as_slice());
    let rhs = |t: T, y: &[T], dy: &mut [T]| -> Result<()> {
        let x = Configuration::from_flat(nb, d, y[..nd].to_vec())?;
        let a = sys.acceleration(&x).map_err(|e| match e {
            Error::Collision { i, j, separation, .. } => Error::Collision {
                i,
                j,
                separation,
                t: Some(t.f64()),
            },
            e => e,
        })?;
        dy[..nd].copy_from_slice(&y[nd..]);
        dy[nd..].copy_from_slice(a.as_slice());
        Ok(())
    };
    let sol = dopri5(rhs, t0, &y0, t1, opts)?;
    Ok(NBodyFlow { sys: sys.clone(), sol })
}

impl<T: Real> NBodyFlow<T> {
    pub fn t_start(&self) -> T {
        self.sol.t[0]
    }

    pub fn t_end(&self) -> T {
        *self.sol.t.last().expect("non-empty")
    }

    pub fn steps(&self) -> usize {
        self.sol.t.len() - 1
    }

    /// (x(t), ẋ(t)) by quintic Hermite interpolation of (x, ẋ, ẍ) across the
    /// enclosing step.
    pub fn state(&self, t: T) -> Result<(Configuration<T>, Configuration<T>)> {
        if !(t >= self.t_start() && t <= self.t_end()) {
            return Err(Error::InvalidInput(format!(
                "time {} outside [{}, {}]",
                t.f64(),
                self.t_start().f64(),
                self.t_end().f64()
            )));
        }
        let ts = &self.sol.t;
        let k = match ts.binary_search_by(|a| a.partial_cmp(&t).expect("finite")) {
            Ok(i) => {
                let (nb, d) = (self.sys.n_bodies(), self.sys.dim());
                let nd = nb * d;
                let y = &self.sol.y[i];
                return Ok((
                    Configuration::from_flat(nb, d, y[..nd].to_vec())?,
                    Configuration::from_flat(nb, d, y[nd..].to_vec())?,
                ));
            }
            Err(i) => i - 1,
        };
        let (nb, d) = (self.sys.n_bodies(), self.sys.dim());
        let nd = nb * d;
        let h = ts[k + 1] - ts[k];
        let s = (t - ts[k]) / h;
        let (y0, y1) = (&self.sol.y[k], &self.sol.y[k + 1]);
        let (f0, f1) = (&self.sol.dy[k], &self.sol.dy[k + 1]);
        let s2 = s * s;
        let s3 = s2 * s;
        let s4 = s3 * s;
        let s5 = s4 * s;
        let c = |x: f64| T::lit(x);
        // quintic Hermite basis and its derivative
        let h00 = T::one() - c(10.0) * s3 + c(15.0) * s4 - c(6.0) * s5;
        let h10 = s - c(6.0) * s3 + c(8.0) * s4 - c(3.0) * s5;
        let h20 = c(0.5) * s2 - c(1.5) * s3 + c(1.5) * s4 - c(0.5) * s5;
        let h01 = c(10.0) * s3 - c(15.0) * s4 + c(6.0) * s5;
        let h11 = -c(4.0) * s3 + c(7.0) * s4 - c(3.0) * s5;
        let h21 = c(0.5) * s3 - s4 + c(0.5) * s5;
        let d00 = -c(30.0) * s2 + c(60.0) * s3 - c(30.0) * s4;
        let d10 = T::one() - c(18.0) * s2 + c(32.0) * s3 - c(15.0) * s4;
        let d20 = s - c(4.5) * s2 + c(6.0) * s3 - c(2.5) * s4;
        let d01 = -d00;
        let d11 = -c(12.0) * s2 + c(28.0) * s3 - c(15.0) * s4;
        let d21 = c(1.5) * s2 - c(4.0) * s3 + c(2.5) * s4;
        let mut x = vec![T::zero(); nd];
        let mut v = vec![T::zero(); nd];
        for i in 0..nd {
            let (p0, p1) = (y0[i], y1[i]);
            let (v0, v1) = (y0[nd + i], y1[nd + i]);
            let (a0, a1) = (f0[nd + i], f1[nd + i]);
            x[i] = h00 * p0 + h * h10 * v0 + h * h * h20 * a0 + h01 * p1 + h * h11 * v1 + h * h * h21 * a1;
            v[i] = (d00 * p0 + d01 * p1) / h + d10 * v0 + h * d20 * a0 + d11 * v1 + h * d21 * a1;
        }
        Ok((Configuration::from_flat(nb, d, x)?, Configuration::from_flat(nb, d, v)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exponential_decay() {
        let sol = dopri5(
            |_, y: &[f64], dy: &mut [f64]| {
                dy[0] = -y[0];
                Ok(())
            },
            0.0,
            &[1.0],
            5.0,
            &OdeOptions::default(),
        )
        .unwrap();
        assert_relative_eq!(sol.y.last().unwrap()[0], (-5.0f64).exp(), max_relative = 1e-10);
        assert_eq!(*sol.t.last().unwrap(), 5.0);
    }

    #[test]
    fn circular_two_body_and_dense_output() {
        // unit masses at distance 2, relative circular orbit: |v_rel|² = M/r
        let sys = MassSystem::<f64>::equal(2, 2).unwrap();
        let x0 = Configuration::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        let w = 0.5f64.sqrt() / 2.0 * 2.0f64.sqrt();
        let v0 = Configuration::from_rows(&[[0.0, w / 2.0f64.sqrt() * 1.0], [0.0, -w / 2.0f64.sqrt()]]).unwrap();
        // speed of each body is sqrt(1/4)=0.5 for r=2 (reduced: v_rel² = 2/2)
        let v0 = v0.scaled(0.5 / v0.body(0)[1]);
        let flow = integrate_nbody(&sys, &x0, &v0, 0.0, 30.0, &OdeOptions::default()).unwrap();
        let omega = 0.5;
        for k in 0..=60 {
            let t = 0.5 * k as f64 + 0.123;
            if t > 30.0 {
                break;
            }
            let (x, v) = flow.state(t).unwrap();
            assert!((x.body(0)[0] - (omega * t).cos()).abs() <= 1e-9, "{t}");
            assert!((x.body(0)[1] - (omega * t).sin()).abs() <= 1e-9);
            assert!((v.body(0)[0] + 0.5 * (omega * t).sin()).abs() <= 1e-9);
            let e = sys.energy(&x, &v).unwrap();
            assert!((e - (0.25 - 0.5)).abs() <= 1e-11);
        }
    }

    #[test]
    fn collision_is_integrator_failure() {
        let sys = MassSystem::<f64>::equal(2, 2).unwrap();
        let x0 = Configuration::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        let v0 = Configuration::zeros(2, 2);
        let r = integrate_nbody(&sys, &x0, &v0, 0.0, 10.0, &OdeOptions::default());
        assert!(matches!(r, Err(Error::IntegratorFailure { .. })), "{r:?}");
    }
}
