//! Dense N×d configurations (positions, velocities, forces).

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// N bodies in d dimensions, stored row-major (body-major).
///
/// The same type carries positions, velocities and gradient blocks; whether a
/// value lies in the zero-barycenter subspace is checked by
/// [`MassSystem::is_centered`](crate::system::MassSystem::is_centered), not
/// enforced by the type.
#[derive(Clone, Debug, PartialEq)]
pub struct Configuration<T> {
    n: usize,
    d: usize,
    data: Vec<T>,
}

impl<T: Real> Configuration<T> {
    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            data: vec![T::zero(); n * d],
        }
    }

    pub fn from_flat(n: usize, d: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values ({n}x{d})", n * d),
                found: format!("{} values", data.len()),
            });
        }
        Ok(Self { n, d, data })
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::DimensionMismatch {
                expected: "at least one row".into(),
                found: "0 rows".into(),
            });
        }
        let d = rows[0].as_ref().len();
        let mut data = Vec::with_capacity(n * d);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: format!("row {i} of length {d}"),
                    found: format!("length {}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { n, d, data })
    }

    #[inline]
    pub fn n_bodies(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn body(&self, i: usize) -> &[T] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn body_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        self.data.chunks(self.d.max(1)).map(|c| c.to_vec()).collect()
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.n != other.n || self.d != other.d {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.n, self.d),
                found: format!("{}x{}", other.n, other.d),
            });
        }
        Ok(())
    }

    pub fn scaled(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            n: self.n,
            d: self.d,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self + other`; shapes must agree (panics otherwise).
    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.n, self.d), (other.n, other.d), "shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Self { n: self.n, d: self.d, data }
    }

    /// `self - other`; shapes must agree (panics otherwise).
    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.n, self.d), (other.n, other.d), "shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Self { n: self.n, d: self.d, data }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        assert_eq!((self.n, self.d), (other.n, other.d), "shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    /// Plain Euclidean inner product of the flattened arrays.
    pub fn dot(&self, other: &Self) -> T {
        self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum()
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    /// Root mean square of body distances from the origin.
    pub fn rms_radius(&self) -> T {
        if self.n == 0 {
            return T::zero();
        }
        (self.dot(self) / T::from_usize_lossy(self.n)).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Applies the linear map `R` (d×d, row-major) to every body.
    pub fn rotated(&self, r: &[T]) -> Self {
        let d = self.d;
        assert_eq!(r.len(), d * d);
        let mut out = Self::zeros(self.n, d);
        for i in 0..self.n {
            let src = self.body(i);
            let dst = out.body_mut(i);
            for (a, dst_a) in dst.iter_mut().enumerate() {
                *dst_a = (0..d).map(|b| r[a * d + b] * src[b]).sum();
            }
        }
        out
    }

    /// Reorders bodies: body `k` of the result is body `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = Self::zeros(self.n, self.d);
        for (k, &p) in perm.iter().enumerate() {
            out.body_mut(k).copy_from_slice(self.body(p));
        }
        out
    }

    pub fn cast<S: Real>(&self) -> Configuration<S> {
        Configuration {
            n: self.n,
            d: self.d,
            data: self.data.iter().map(|v| S::lit(v.f64())).collect(),
        }
    }
}

impl<T: Real + Serialize> Serialize for Configuration<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de, T: Real + Deserialize<'de>> Deserialize<'de> for Configuration<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<T>> = Vec::deserialize(d)?;
        Configuration::from_rows(&rows).map_err(D::Error::custom)
    }
}
