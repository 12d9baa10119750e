//! Rolling without slipping or twisting, and Brownian motion on the sphere.
//!
//! A curve `q` in `R^m` is developed onto an embedded surface `M ⊂ R^n` by
//! integrating `ṗ = A q̇`, `Ȧ = Ω A`, where `Ω` is built from the second
//! fundamental form at `p` along `ṗ`. On the unit sphere with `A e_z = p` this
//! reduces to `Ω = hat(p × ṗ)`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::bundle::{HorizontalFields, HorizontalSystem};
use crate::error::{Error, Result};
use crate::linalg::{orthogonality_defect, polar_factor};
use crate::noise::{substep_increments, TimeGrid};
use crate::scalar::{lit, to_f64, Real};

/// Largest invariant residual accepted before restoration in [`develop_curve`].
pub const RESTORATION_TOLERANCE: f64 = 1e-6;

/// Tolerance on `AᵀA = I` for inputs to [`sphere_frame_step`].
pub const ORTHOGONALITY_TOLERANCE: f64 = 1e-9;

/// `hat(ω) u = ω × u`.
pub fn hat<T: Real>(w: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new(z, -w[2], w[1], w[2], z, -w[0], -w[1], w[0], z)
}

/// Inverse of [`hat`] on skew matrices.
pub fn vee<T: Real>(m: &Matrix3<T>) -> Vector3<T> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// `exp(hat(ω))` by the Rodrigues formula.
pub fn so3_exp<T: Real>(w: &Vector3<T>) -> Matrix3<T> {
    let theta2 = w.norm_squared();
    let k = hat(w);
    let (a, b) = if theta2 < lit::<T>(1e-8) {
        // Taylor coefficients of sin θ/θ and (1 − cos θ)/θ² to O(θ⁶)
        let t4 = theta2 * theta2;
        (
            T::one() - theta2 / lit::<T>(6.0) + t4 / lit::<T>(120.0),
            lit::<T>(0.5) - theta2 / lit::<T>(24.0) + t4 / lit::<T>(720.0),
        )
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (T::one() - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation angle of an orthogonal matrix, in `[0, π]`.
pub fn rotation_angle<T: Real>(a: &Matrix3<T>) -> T {
    let c = (a.trace() - T::one()) * lit::<T>(0.5);
    c.max(-T::one()).min(T::one()).acos()
}

/// A surface `M^m ⊂ R^n` described through its extrinsic geometry.
pub trait EmbeddedSurface<T: Real>: Send + Sync {
    fn ambient_dim(&self) -> usize;

    fn intrinsic_dim(&self) -> usize;

    /// Zero exactly on the surface.
    fn constraint(&self, p: &DVector<T>) -> T;

    /// Orthogonal projector onto `T_p M`.
    fn tangent_projector(&self, p: &DVector<T>) -> DMatrix<T>;

    /// Normal-valued second fundamental form `II_p(u, v)` for tangent `u, v`.
    fn second_fundamental_form(&self, p: &DVector<T>, u: &DVector<T>, v: &DVector<T>) -> DVector<T>;

    /// Adjoint in the second slot: `⟨II_p(u, w), ν⟩ = ⟨w, II^t_p(u, ν)⟩`.
    fn sff_transpose(&self, p: &DVector<T>, u: &DVector<T>, nu: &DVector<T>) -> DVector<T>;

    /// Nearest point on the surface, for invariant restoration.
    fn project(&self, p: &DVector<T>) -> DVector<T>;
}

/// The unit sphere `S² ⊂ R³`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sphere;

impl<T: Real> EmbeddedSurface<T> for Sphere {
    fn ambient_dim(&self) -> usize {
        3
    }

    fn intrinsic_dim(&self) -> usize {
        2
    }

    fn constraint(&self, p: &DVector<T>) -> T {
        p.norm() - T::one()
    }

    fn tangent_projector(&self, p: &DVector<T>) -> DMatrix<T> {
        DMatrix::identity(3, 3) - p * p.transpose()
    }

    fn second_fundamental_form(&self, p: &DVector<T>, u: &DVector<T>, v: &DVector<T>) -> DVector<T> {
        -p * u.dot(v)
    }

    fn sff_transpose(&self, p: &DVector<T>, u: &DVector<T>, nu: &DVector<T>) -> DVector<T> {
        -u * p.dot(nu)
    }

    fn project(&self, p: &DVector<T>) -> DVector<T> {
        p / p.norm()
    }
}

/// A point on the surface and the orthogonal matrix carrying the plane onto it.
#[derive(Debug, Clone, PartialEq)]
pub struct RollingState<T: Real> {
    pub p: DVector<T>,
    pub a: DMatrix<T>,
}

impl<T: Real> RollingState<T> {
    pub fn new(p: DVector<T>, a: DMatrix<T>) -> Self {
        RollingState { p, a }
    }

    /// North pole of the unit sphere with `A = I`.
    pub fn north_pole() -> Self {
        RollingState::new(
            DVector::from_vec(vec![T::zero(), T::zero(), T::one()]),
            DMatrix::identity(3, 3),
        )
    }
}

/// Time derivatives `(ṗ, Ȧ)` of the rolling state for plane velocity `q̇`.
///
/// `Ω u = II_p(ṗ, u)` on tangent vectors and `Ω ν = −II^t_p(ṗ, ν)` on normal
/// vectors; the sign split makes `Ω` skew.
pub fn development_rhs<T: Real, M: EmbeddedSurface<T> + ?Sized>(
    surface: &M,
    state: &RollingState<T>,
    qdot: &DVector<T>,
) -> Result<(DVector<T>, DMatrix<T>)> {
    let n = surface.ambient_dim();
    let m = surface.intrinsic_dim();
    let residual = to_f64(surface.constraint(&state.p).abs());
    if !(residual <= RESTORATION_TOLERANCE) {
        return Err(Error::OffSurface { residual });
    }
    if qdot.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: qdot.len(),
        });
    }
    if qdot.rows(m, n - m).amax() != T::zero() {
        return Err(Error::InvalidParameter(
            "plane velocity must vanish outside the first intrinsic coordinates".into(),
        ));
    }
    Ok(rolling_rates(surface, state, qdot))
}

/// [`development_rhs`] without the validity checks, for integrator stages.
fn rolling_rates<T: Real, M: EmbeddedSurface<T> + ?Sized>(
    surface: &M,
    state: &RollingState<T>,
    qdot: &DVector<T>,
) -> (DVector<T>, DMatrix<T>) {
    let n = surface.ambient_dim();
    let pdot = &state.a * qdot;
    let proj = surface.tangent_projector(&state.p);
    let normal = DMatrix::identity(n, n) - &proj;
    let cols: Vec<_> = (0..n)
        .map(|k| {
            let t = proj.column(k).into_owned();
            let nu = normal.column(k).into_owned();
            surface.second_fundamental_form(&state.p, &pdot, &t) - surface.sff_transpose(&state.p, &pdot, &nu)
        })
        .collect();
    let omega = DMatrix::from_columns(&cols);
    let adot = &omega * &state.a;
    (pdot, adot)
}

/// Develops the piecewise-linear curve through `(times[k], q[k])`.
///
/// Each segment is integrated with `substeps` RK4 steps; afterwards `A` is
/// replaced by its polar factor and `p` by its projection onto the surface.
/// Returns the state at every grid time.
pub fn develop_curve<T: Real, M: EmbeddedSurface<T> + ?Sized>(
    surface: &M,
    times: &[T],
    q: &[DVector<T>],
    init: RollingState<T>,
    substeps: usize,
) -> Result<Vec<RollingState<T>>> {
    let n = surface.ambient_dim();
    let m = surface.intrinsic_dim();
    if times.len() != q.len() || times.is_empty() {
        return Err(Error::InvalidParameter(
            "curve needs matching, non-empty times and points".into(),
        ));
    }
    if substeps == 0 {
        return Err(Error::InvalidParameter("substeps must be ≥ 1".into()));
    }
    if let Some(bad) = q.iter().find(|qk| qk.len() != m) {
        return Err(Error::Dimension {
            expected: m,
            found: bad.len(),
        });
    }
    let mut out = vec![init];
    for k in 0..times.len() - 1 {
        let dt = times[k + 1] - times[k];
        if !(dt > T::zero()) {
            return Err(Error::InvalidParameter("curve times must increase strictly".into()));
        }
        let mut qdot = DVector::zeros(n);
        qdot.rows_mut(0, m).copy_from(&((&q[k + 1] - &q[k]) / dt));
        let mut s = out.last().expect("non-empty").clone();
        let tau = dt / lit::<T>(substeps as f64);
        let half = lit::<T>(0.5);
        let two = lit::<T>(2.0);
        development_rhs(surface, &s, &qdot).map_err(|e| e.at_step(k))?;
        let rhs = |st: &RollingState<T>| rolling_rates(surface, st, &qdot);
        let shift = |st: &RollingState<T>, d: &(DVector<T>, DMatrix<T>), c: T| {
            RollingState::new(&st.p + &d.0 * c, &st.a + &d.1 * c)
        };
        for _ in 0..substeps {
            let k1 = rhs(&s);
            let k2 = rhs(&shift(&s, &k1, tau * half));
            let k3 = rhs(&shift(&s, &k2, tau * half));
            let k4 = rhs(&shift(&s, &k3, tau));
            let c = tau / lit::<T>(6.0);
            s.p += (k1.0 + k2.0 * two + k3.0 * two + k4.0) * c;
            s.a += (k1.1 + k2.1 * two + k3.1 * two + k4.1) * c;
        }
        let residual = to_f64(surface.constraint(&s.p).abs()).max(to_f64(orthogonality_defect(&s.a)));
        if !(residual <= RESTORATION_TOLERANCE) {
            return Err(Error::Restoration { residual }.at_step(k));
        }
        s.a = polar_factor(&s.a);
        s.p = surface.project(&s.p);
        out.push(s);
    }
    Ok(out)
}

/// Body-frame rotation vector `e_z × (dw_1, dw_2, 0)` of one sphere step.
pub fn sphere_body_vector<T: Real>(dw: &[T; 2]) -> Vector3<T> {
    Vector3::new(-dw[1], dw[0], T::zero())
}

/// Lie–Euler step `exp(hat(A_2 dw_1 − A_1 dw_2)) A` of the SO(3) frame SDE.
///
/// `h` does not enter: the SDE has no drift in Stratonovich form.
pub fn sphere_frame_step<T: Real>(a: &Matrix3<T>, dw: &[T; 2], _h: T) -> Result<Matrix3<T>> {
    let deviation = to_f64((a.transpose() * a - Matrix3::identity()).amax());
    if !(deviation <= ORTHOGONALITY_TOLERANCE) || a.determinant() <= T::zero() {
        return Err(Error::NotOrthogonal { deviation });
    }
    let w = a.column(1) * dw[0] - a.column(0) * dw[1];
    Ok(so3_exp(&w) * a)
}

/// Terminal point of one sphere path plus invariant diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereSample<T: Real> {
    pub x_end: Vector3<T>,
    pub frame_end: Matrix3<T>,
    /// `max_n | |x_n| − 1 |`.
    pub max_norm_deviation: T,
    /// `max_n |A_nᵀA_n − I|`.
    pub max_orthogonality_deviation: T,
}

fn sphere_chain<T: Real>(
    seed: u64,
    stream: u64,
    t_end: f64,
    h: f64,
    a0: Matrix3<T>,
    mut visit: impl FnMut(&Matrix3<T>),
) -> Result<SphereSample<T>> {
    let grid = TimeGrid::with_step(t_end, h)?;
    let ht = lit::<T>(grid.h());
    let mut a = a0;
    let mut norm_dev = T::zero();
    let mut orth_dev = T::zero();
    let mut track = |a: &Matrix3<T>| {
        norm_dev = norm_dev.max((a.column(2).norm() - T::one()).abs());
        orth_dev = orth_dev.max((a.transpose() * a - Matrix3::identity()).amax());
    };
    track(&a);
    visit(&a);
    for k in 0..grid.n_steps() {
        let z = substep_increments::<T>(seed, stream, k, grid.h(), 2, 1);
        a = sphere_frame_step(&a, &[z[0], z[1]], ht)?;
        track(&a);
        visit(&a);
    }
    Ok(SphereSample {
        x_end: a.column(2).into_owned(),
        frame_end: a,
        max_norm_deviation: norm_dev,
        max_orthogonality_deviation: orth_dev,
    })
}

/// Brownian motion on `S²` from the north pole, `x_n = A_n e_z`.
pub fn sphere_bm_path<T: Real>(seed: u64, stream: u64, t_end: f64, h: f64) -> Result<Vec<Vector3<T>>> {
    let mut path = Vec::new();
    sphere_chain(seed, stream, t_end, h, Matrix3::identity(), |a| {
        path.push(a.column(2).into_owned())
    })?;
    Ok(path)
}

/// Like [`sphere_bm_path`] but keeps only the endpoint and diagnostics.
pub fn sphere_bm_sample<T: Real>(seed: u64, stream: u64, t_end: f64, h: f64) -> Result<SphereSample<T>> {
    sphere_bm_sample_from(seed, stream, t_end, h, Matrix3::identity())
}

/// Endpoint sample started from frame `a0`.
pub fn sphere_bm_sample_from<T: Real>(
    seed: u64,
    stream: u64,
    t_end: f64,
    h: f64,
    a0: Matrix3<T>,
) -> Result<SphereSample<T>> {
    sphere_chain(seed, stream, t_end, h, a0, |_| {})
}

/// The SO(3) frame bundle of `S²` as a horizontal system on `vec(A)`:
/// `F_1 = hat(A_2) A`, `F_2 = −hat(A_1) A`, no drift.
#[derive(Debug, Clone, Copy)]
pub struct SphereFrameBundle {
    pub reorthonormalize: bool,
}

impl Default for SphereFrameBundle {
    fn default() -> Self {
        SphereFrameBundle { reorthonormalize: true }
    }
}

fn unpack3<T: Real>(y: &DVector<T>) -> Matrix3<T> {
    Matrix3::from_column_slice(y.as_slice())
}

fn pack3<T: Real>(m: &Matrix3<T>) -> DVector<T> {
    DVector::from_column_slice(m.as_slice())
}

impl<T: Real> HorizontalSystem<T> for SphereFrameBundle {
    fn noise_dim(&self) -> usize {
        2
    }

    fn state_dim(&self) -> usize {
        9
    }

    fn fields(&self, y: &DVector<T>) -> Result<HorizontalFields<T>> {
        if y.len() != 9 {
            return Err(Error::Dimension {
                expected: 9,
                found: y.len(),
            });
        }
        let a = unpack3(y);
        let f1 = hat(&a.column(1).into_owned()) * a;
        let f2 = -hat(&a.column(0).into_owned()) * a;
        Ok(HorizontalFields {
            drift: DVector::zeros(9),
            noise: vec![pack3(&f1), pack3(&f2)],
        })
    }

    fn base(&self, y: &DVector<T>) -> DVector<T> {
        y.rows(6, 3).into_owned()
    }

    fn restore(&self, y: DVector<T>) -> Result<DVector<T>> {
        if !self.reorthonormalize {
            return Ok(y);
        }
        let a = DMatrix::from_column_slice(3, 3, y.as_slice());
        Ok(DVector::from_column_slice(polar_factor(&a).as_slice()))
    }

    fn frame_rotation(&self, y: &DVector<T>) -> Result<DMatrix<T>> {
        Ok(DMatrix::from_column_slice(3, 3, y.as_slice()))
    }
}

/// Time-one RK4 flow of the truncated field `B ↦ hat(B v) B` with body
/// vector `v = e_z × (dw_1, dw_2, 0)`.
pub fn sphere_series_flow<T: Real>(a: &Matrix3<T>, dw: &[T; 2], substeps: usize) -> Result<Matrix3<T>> {
    if substeps == 0 {
        return Err(Error::InvalidParameter("substeps must be ≥ 1".into()));
    }
    let v = sphere_body_vector(dw);
    let field = |b: &Matrix3<T>| hat(&(b * v)) * b;
    let dt = T::one() / lit::<T>(substeps as f64);
    let half = lit::<T>(0.5);
    let two = lit::<T>(2.0);
    let mut b = *a;
    for _ in 0..substeps {
        let k1 = field(&b);
        let k2 = field(&(b + k1 * (dt * half)));
        let k3 = field(&(b + k2 * (dt * half)));
        let k4 = field(&(b + k3 * dt));
        b += (k1 + k2 * two + k3 * two + k4) * (dt / lit::<T>(6.0));
    }
    Ok(b)
}
