//! Small dense helpers on top of nalgebra: rank-3 arrays, polar factors,
//! condition checks and central differences.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

/// Upper bound on the frame condition number accepted as elliptic.
pub const ELLIPTICITY_BOUND: f64 = 1e8;

/// Relative step used by every central finite difference in the crate.
pub const FD_REL_STEP: f64 = 1e-5;

/// Dense `n × n × n` array indexed as `[a][b][c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor3<T> {
    pub fn zeros(n: usize) -> Self {
        Tensor3 {
            n,
            data: vec![T::zero(); n * n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n * n * n);
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    data.push(f(a, b, c));
                }
            }
        }
        Tensor3 { n, data }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize) -> T {
        self.data[(a * self.n + b) * self.n + c]
    }

    #[inline]
    pub fn set(&mut self, a: usize, b: usize, c: usize, v: T) {
        self.data[(a * self.n + b) * self.n + c] = v;
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.n, other.n);
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }

    /// Contracts the two lower slots: `out^a = Σ_{b,c} self[a][b][c] u^b v^c`.
    pub fn contract(&self, u: &DVector<T>, v: &DVector<T>) -> DVector<T> {
        let n = self.n;
        DVector::from_fn(n, |a, _| {
            let mut s = T::zero();
            for b in 0..n {
                if u[b] == T::zero() {
                    continue;
                }
                for c in 0..n {
                    s += self.get(a, b, c) * u[b] * v[c];
                }
            }
            s
        })
    }
}

/// Inverts a frame matrix, rejecting it when its Frobenius condition number
/// exceeds [`ELLIPTICITY_BOUND`]. The point is only used for the error message.
pub fn invert_frame<T: Real>(frame: &DMatrix<T>, point: &DVector<T>) -> Result<DMatrix<T>> {
    let fail = |condition: f64| Error::Ellipticity {
        point: point.iter().map(|v| to_f64(*v)).collect(),
        condition,
    };
    let inv = frame.clone().try_inverse().ok_or_else(|| fail(f64::INFINITY))?;
    let condition = to_f64(frame.norm() * inv.norm());
    if !condition.is_finite() || condition > ELLIPTICITY_BOUND {
        return Err(fail(condition));
    }
    Ok(inv)
}

/// Orthogonal polar factor `U Vᵀ` of a square matrix.
pub fn polar_factor<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    u * v_t
}

/// `max |QᵀQ − I|` entrywise.
pub fn orthogonality_defect<T: Real>(q: &DMatrix<T>) -> T {
    let n = q.ncols();
    let p = q.transpose() * q;
    let mut m = T::zero();
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { T::one() } else { T::zero() };
            m = m.max((p[(i, j)] - target).abs());
        }
    }
    m
}

/// Absolute step for a central difference around `x`.
#[inline]
pub fn fd_step<T: Real>(x: &DVector<T>) -> T {
    lit::<T>(FD_REL_STEP) * T::one().max(x.amax())
}

/// Central-difference Jacobian `J[a][b] = ∂_b f^a`.
pub fn fd_jacobian<T: Real>(f: impl Fn(&DVector<T>) -> DVector<T>, x: &DVector<T>) -> DMatrix<T> {
    let n = x.len();
    let eps = fd_step(x);
    let two = lit::<T>(2.0);
    let mut cols = Vec::with_capacity(n);
    let mut xp = x.clone();
    for b in 0..n {
        xp[b] = x[b] + eps;
        let fp = f(&xp);
        xp[b] = x[b] - eps;
        let fm = f(&xp);
        xp[b] = x[b];
        cols.push((fp - fm) / (two * eps));
    }
    let rows = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(rows, n, |a, b| cols[b][a])
}

/// Central difference of a vector-valued map along direction `v`.
pub fn fd_directional<T: Real>(
    f: impl Fn(&DVector<T>) -> Result<DVector<T>>,
    x: &DVector<T>,
    v: &DVector<T>,
) -> Result<DVector<T>> {
    let vn = v.norm();
    if vn == T::zero() {
        return Ok(DVector::zeros(f(x)?.len()));
    }
    let eps = fd_step(x) / vn;
    let fp = f(&(x + v * eps))?;
    let fm = f(&(x - v * eps))?;
    Ok((fp - fm) / (lit::<T>(2.0) * eps))
}
