//! Diffusions on a bundle driven by horizontal fields, in Stratonovich form
//! `dy = F_0(y) dt + F_i(y) ∘ dB^i`.
//!
//! [`FrameBundle`] lifts a [`VectorFieldSystem`] to its orthonormal frame
//! bundle: `F_i` is the basic horizontal field `B(e_i)` and `F_0` is the
//! horizontal lift of the Laplacian drift `b̃`, so the base projection has
//! generator `½Δ_M + b̃`, the same as the original Itô SDE.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{horizontal_lift_into, FramePoint, LocalGeometry, VectorFieldSystem};
use crate::linalg::{invert_frame, polar_factor, FD_REL_STEP};
use crate::scalar::{lit, to_f64, Real};

/// Smallest `|det(σ⁻¹e)|` accepted before a frame counts as degenerate.
pub const FRAME_DET_THRESHOLD: f64 = 1e-6;

/// `F_0` and `F_1..F_d` evaluated at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizontalFields<T: Real> {
    pub drift: DVector<T>,
    pub noise: Vec<DVector<T>>,
}

pub trait HorizontalSystem<T: Real>: Send + Sync {
    /// Number of driving Brownian motions.
    fn noise_dim(&self) -> usize;

    fn state_dim(&self) -> usize;

    fn fields(&self, y: &DVector<T>) -> Result<HorizontalFields<T>>;

    /// Base-space projection of a state.
    fn base(&self, y: &DVector<T>) -> DVector<T>;

    /// Projection back onto the invariant set after a step.
    fn restore(&self, y: DVector<T>) -> Result<DVector<T>> {
        Ok(y)
    }

    /// The orthogonal matrix `R` with `e = σ(x) R`, i.e. the frame read in
    /// the reference section.
    fn frame_rotation(&self, y: &DVector<T>) -> Result<DMatrix<T>>;

    /// Derivative of every noise field along `v`, by central differences.
    fn noise_derivatives(&self, y: &DVector<T>, v: &DVector<T>) -> Result<Vec<DVector<T>>> {
        let vn = v.norm();
        if vn == T::zero() {
            return Ok(vec![DVector::zeros(self.state_dim()); self.noise_dim()]);
        }
        let eps = lit::<T>(FD_REL_STEP) * T::one().max(y.amax()) / vn;
        let plus = self.fields(&(y + v * eps))?;
        let minus = self.fields(&(y - v * eps))?;
        let scale = T::one() / (lit::<T>(2.0) * eps);
        Ok(plus
            .noise
            .into_iter()
            .zip(minus.noise)
            .map(|(p, m)| (p - m) * scale)
            .collect())
    }
}

/// Orthonormal frame bundle of a [`VectorFieldSystem`], with state
/// `(x, vec(e))` as in [`FramePoint::to_state`].
pub struct FrameBundle<'a, T: Real, S: VectorFieldSystem<T> + ?Sized> {
    pub sys: &'a S,
    /// Project the frame back to orthonormality after every step.
    pub reorthonormalize: bool,
    _scalar: std::marker::PhantomData<T>,
}

impl<'a, T: Real, S: VectorFieldSystem<T> + ?Sized> FrameBundle<'a, T, S> {
    pub fn new(sys: &'a S) -> Self {
        FrameBundle {
            sys,
            reorthonormalize: true,
            _scalar: std::marker::PhantomData,
        }
    }

    pub fn with_reorthonormalize(mut self, on: bool) -> Self {
        self.reorthonormalize = on;
        self
    }

    fn d(&self) -> usize {
        self.sys.dim()
    }

    /// Fields at `fp` given the geometry at its base point.
    pub fn fields_with(&self, geom: &LocalGeometry<T>, fp: &FramePoint<T>) -> HorizontalFields<T> {
        let d = self.d();
        let b = self.sys.drift(&fp.x) + geom.laplacian_drift_shift();
        let n = d + d * d;
        let mut drift = DVector::zeros(n);
        horizontal_lift_into(geom, &fp.e, b.as_slice(), drift.as_mut_slice());
        let noise = (0..d)
            .map(|i| {
                let mut f = DVector::zeros(n);
                let col = &fp.e.as_slice()[i * d..(i + 1) * d];
                horizontal_lift_into(geom, &fp.e, col, f.as_mut_slice());
                f
            })
            .collect();
        HorizontalFields { drift, noise }
    }

    /// `σ⁻¹e` after checking that it is not degenerate.
    fn relative_frame(&self, fp: &FramePoint<T>) -> Result<DMatrix<T>> {
        let sigma = self.sys.frame(&fp.x);
        let inv = invert_frame(&sigma, &fp.x)?;
        let rel = inv * &fp.e;
        let det = to_f64(rel.determinant());
        if !(det.abs() >= FRAME_DET_THRESHOLD) {
            return Err(Error::FrameDegenerate { det });
        }
        Ok(rel)
    }
}

impl<T: Real, S: VectorFieldSystem<T> + ?Sized> HorizontalSystem<T> for FrameBundle<'_, T, S> {
    fn noise_dim(&self) -> usize {
        self.d()
    }

    fn state_dim(&self) -> usize {
        let d = self.d();
        d + d * d
    }

    fn fields(&self, y: &DVector<T>) -> Result<HorizontalFields<T>> {
        let fp = FramePoint::from_state(y, self.d());
        self.relative_frame(&fp)?;
        let geom = LocalGeometry::at(self.sys, &fp.x)?;
        Ok(self.fields_with(&geom, &fp))
    }

    fn base(&self, y: &DVector<T>) -> DVector<T> {
        y.rows(0, self.d()).into_owned()
    }

    fn restore(&self, y: DVector<T>) -> Result<DVector<T>> {
        let d = self.d();
        let fp = FramePoint::from_state(&y, d);
        let rel = self.relative_frame(&fp)?;
        if !self.reorthonormalize {
            return Ok(y);
        }
        let e = self.sys.frame(&fp.x) * polar_factor(&rel);
        Ok(FramePoint::new(fp.x, e).to_state())
    }

    fn frame_rotation(&self, y: &DVector<T>) -> Result<DMatrix<T>> {
        let fp = FramePoint::from_state(y, self.d());
        Ok(polar_factor(&self.relative_frame(&fp)?))
    }
}
