//! Built-in problems, registered by name.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::VectorFieldSystem;
use crate::scalar::{lit, Real};

/// Constant orthonormal fields `A_i = e_i` with a constant drift.
#[derive(Debug, Clone)]
pub struct Flat<T: Real> {
    pub drift: DVector<T>,
}

impl<T: Real> Flat<T> {
    pub fn new(drift: DVector<T>) -> Self {
        Flat { drift }
    }

    /// `d = 2`, drift `(0.3, −0.2)`.
    pub fn standard() -> Self {
        Flat::new(DVector::from_vec(vec![lit(0.3), lit(-0.2)]))
    }
}

impl<T: Real> VectorFieldSystem<T> for Flat<T> {
    fn name(&self) -> &str {
        "flat"
    }

    fn dim(&self) -> usize {
        self.drift.len()
    }

    fn drift(&self, _x: &DVector<T>) -> DVector<T> {
        self.drift.clone()
    }

    fn field(&self, i: usize, _x: &DVector<T>) -> DVector<T> {
        let mut v = DVector::zeros(self.dim());
        v[i] = T::one();
        v
    }

    fn drift_jacobian(&self, _x: &DVector<T>) -> DMatrix<T> {
        DMatrix::zeros(self.dim(), self.dim())
    }

    fn field_jacobian(&self, _i: usize, _x: &DVector<T>) -> DMatrix<T> {
        DMatrix::zeros(self.dim(), self.dim())
    }

    fn is_flat(&self) -> bool {
        true
    }

    fn frame(&self, _x: &DVector<T>) -> DMatrix<T> {
        DMatrix::identity(self.dim(), self.dim())
    }
}

/// `A_i = s·(1 + x_i²)^{1/2} e_i`, no drift. The fields commute.
#[derive(Debug, Clone)]
pub struct DiagCommuting<T: Real> {
    pub scale: T,
    pub dim: usize,
}

impl<T: Real> DiagCommuting<T> {
    pub fn new(scale: T, dim: usize) -> Self {
        DiagCommuting { scale, dim }
    }

    pub fn standard() -> Self {
        DiagCommuting::new(lit(0.5), 2)
    }

    fn profile(&self, xi: T) -> (T, T) {
        let r = (T::one() + xi * xi).sqrt();
        (self.scale * r, self.scale * xi / r)
    }
}

impl<T: Real> VectorFieldSystem<T> for DiagCommuting<T> {
    fn name(&self) -> &str {
        "diag-commuting"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, _x: &DVector<T>) -> DVector<T> {
        DVector::zeros(self.dim)
    }

    fn field(&self, i: usize, x: &DVector<T>) -> DVector<T> {
        let mut v = DVector::zeros(self.dim);
        v[i] = self.profile(x[i]).0;
        v
    }

    fn drift_jacobian(&self, _x: &DVector<T>) -> DMatrix<T> {
        DMatrix::zeros(self.dim, self.dim)
    }

    fn field_jacobian(&self, i: usize, x: &DVector<T>) -> DMatrix<T> {
        let mut j = DMatrix::zeros(self.dim, self.dim);
        j[(i, i)] = self.profile(x[i]).1;
        j
    }

    fn frame(&self, x: &DVector<T>) -> DMatrix<T> {
        DMatrix::from_diagonal(&x.map(|xi| self.profile(xi).0))
    }
}

/// `A_1 = (s, 0)`, `A_2 = (0, s·x¹)`, no drift: a Grushin-type plane whose
/// frame fields do not commute. The metric is elliptic for `x¹ ≠ 0`.
#[derive(Debug, Clone)]
pub struct NonCommuting2d<T: Real> {
    pub scale: T,
}

impl<T: Real> NonCommuting2d<T> {
    pub fn new(scale: T) -> Self {
        NonCommuting2d { scale }
    }

    /// Unit scale, used for pointwise geometry.
    pub fn unit() -> Self {
        NonCommuting2d::new(T::one())
    }

    /// Scale `0.2`: paths from `(1, 0)` stay well inside `x¹ > 0` up to `T = 1`.
    pub fn standard() -> Self {
        NonCommuting2d::new(lit(0.2))
    }
}

impl<T: Real> VectorFieldSystem<T> for NonCommuting2d<T> {
    fn name(&self) -> &str {
        "noncomm2d"
    }

    fn dim(&self) -> usize {
        2
    }

    fn drift(&self, _x: &DVector<T>) -> DVector<T> {
        DVector::zeros(2)
    }

    fn field(&self, i: usize, x: &DVector<T>) -> DVector<T> {
        match i {
            0 => DVector::from_vec(vec![self.scale, T::zero()]),
            _ => DVector::from_vec(vec![T::zero(), self.scale * x[0]]),
        }
    }

    fn drift_jacobian(&self, _x: &DVector<T>) -> DMatrix<T> {
        DMatrix::zeros(2, 2)
    }

    fn field_jacobian(&self, i: usize, _x: &DVector<T>) -> DMatrix<T> {
        let mut j = DMatrix::zeros(2, 2);
        if i == 1 {
            j[(1, 0)] = self.scale;
        }
        j
    }

    fn frame(&self, x: &DVector<T>) -> DMatrix<T> {
        DMatrix::from_row_slice(2, 2, &[self.scale, T::zero(), T::zero(), self.scale * x[0]])
    }
}

/// Geometric Brownian motion `dX = μX dt + X dB`.
#[derive(Debug, Clone)]
pub struct Gbm1d<T: Real> {
    pub mu: T,
}

impl<T: Real> Gbm1d<T> {
    pub fn new(mu: T) -> Self {
        Gbm1d { mu }
    }

    pub fn standard() -> Self {
        Gbm1d::new(T::zero())
    }

    /// `X_T` given `B_T`.
    pub fn exact(&self, x0: T, t: T, b_t: T) -> T {
        x0 * ((self.mu - lit::<T>(0.5)) * t + b_t).exp()
    }
}

impl<T: Real> VectorFieldSystem<T> for Gbm1d<T> {
    fn name(&self) -> &str {
        "gbm1d"
    }

    fn dim(&self) -> usize {
        1
    }

    fn drift(&self, x: &DVector<T>) -> DVector<T> {
        x * self.mu
    }

    fn field(&self, _i: usize, x: &DVector<T>) -> DVector<T> {
        x.clone()
    }

    fn drift_jacobian(&self, _x: &DVector<T>) -> DMatrix<T> {
        DMatrix::from_element(1, 1, self.mu)
    }

    fn field_jacobian(&self, _i: usize, _x: &DVector<T>) -> DMatrix<T> {
        DMatrix::identity(1, 1)
    }

    fn frame(&self, x: &DVector<T>) -> DMatrix<T> {
        DMatrix::from_element(1, 1, x[0])
    }
}

/// Names accepted by [`preset`]. `sphere` lives in the development module.
pub const PRESET_NAMES: [&str; 5] = ["flat", "diag-commuting", "noncomm2d", "gbm1d", "sphere"];

/// A registered base-space problem with its default starting point.
pub struct Preset {
    pub system: Box<dyn VectorFieldSystem<f64>>,
    pub x0: DVector<f64>,
}

impl std::fmt::Debug for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Preset")
            .field("system", &self.system.name())
            .field("x0", &self.x0)
            .finish()
    }
}

/// Looks up a base-space preset by name.
pub fn preset(name: &str) -> Result<Preset> {
    let (system, x0): (Box<dyn VectorFieldSystem<f64>>, Vec<f64>) = match name {
        "flat" => (Box::new(Flat::standard()), vec![0.0, 0.0]),
        "diag-commuting" => (Box::new(DiagCommuting::standard()), vec![0.2, -0.3]),
        "noncomm2d" => (Box::new(NonCommuting2d::standard()), vec![1.0, 0.0]),
        "gbm1d" => (Box::new(Gbm1d::standard()), vec![1.0]),
        "sphere" => {
            return Err(Error::InvalidParameter(
                "the sphere problem is simulated on SO(3), not through a base-space system".into(),
            ))
        }
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown problem `{other}`; valid names: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(Preset {
        system,
        x0: DVector::from_vec(x0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::fd_jacobian;

    fn check_jacobians<S: VectorFieldSystem<f64>>(sys: &S, x: &DVector<f64>) {
        let jd = fd_jacobian(|y| sys.drift(y), x);
        assert!((jd - sys.drift_jacobian(x)).amax() < 1e-8);
        for i in 0..sys.dim() {
            let j = fd_jacobian(|y| sys.field(i, y), x);
            assert!((j - sys.field_jacobian(i, x)).amax() < 1e-8, "{} field {i}", sys.name());
        }
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let x = DVector::from_vec(vec![0.8, -1.3]);
        check_jacobians(&Flat::<f64>::standard(), &x);
        check_jacobians(&DiagCommuting::<f64>::standard(), &x);
        check_jacobians(&NonCommuting2d::<f64>::standard(), &x);
        check_jacobians(&Gbm1d::new(0.4), &DVector::from_vec(vec![1.7]));
    }

    #[test]
    fn registry_resolves_every_base_name() {
        for name in PRESET_NAMES.iter().filter(|n| **n != "sphere") {
            let p = preset(name).unwrap();
            assert_eq!(p.system.name(), *name);
            assert_eq!(p.x0.len(), p.system.dim());
        }
        let err = preset("nope").unwrap_err().to_string();
        assert!(err.contains("noncomm2d"));
    }

    #[test]
    fn f32_instantiation() {
        let sys = NonCommuting2d::<f32>::unit();
        let x = DVector::from_vec(vec![2.0f32, 0.0]);
        assert_eq!(sys.frame(&x)[(1, 1)], 2.0);
    }
}
