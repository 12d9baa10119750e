//! One-step integrators and path folding.
//!
//! Base-space steppers take a point and return a point. Frame-bundle steppers
//! work on any [`HorizontalSystem`]; the `FramePoint` wrappers use the
//! orthonormal frame bundle of a [`VectorFieldSystem`].

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::bundle::{FrameBundle, HorizontalFields, HorizontalSystem};
use crate::error::{Error, Result};
use crate::geometry::{FramePoint, LocalGeometry, VectorFieldSystem};
use crate::linalg::{fd_step, invert_frame};
use crate::noise::{StepInput, WienerIncrements};
use crate::scalar::{lit, Real};

/// Default number of RK4 substeps for the Castell–Gaines flow.
pub const DEFAULT_ODE_SUBSTEPS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    EulerMaruyama,
    Milstein,
    FrameMilstein,
    Cmt,
    Theta2d,
    AlvesCruzeiro,
    CastellGaines05,
    CastellGaines10,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 8] = [
        SchemeKind::EulerMaruyama,
        SchemeKind::Milstein,
        SchemeKind::FrameMilstein,
        SchemeKind::Cmt,
        SchemeKind::Theta2d,
        SchemeKind::AlvesCruzeiro,
        SchemeKind::CastellGaines05,
        SchemeKind::CastellGaines10,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::EulerMaruyama => "em",
            SchemeKind::Milstein => "milstein",
            SchemeKind::FrameMilstein => "frame-milstein",
            SchemeKind::Cmt => "cmt",
            SchemeKind::Theta2d => "theta2d",
            SchemeKind::AlvesCruzeiro => "ac",
            SchemeKind::CastellGaines05 => "cg05",
            SchemeKind::CastellGaines10 => "cg10",
        }
    }

    pub fn names() -> Vec<&'static str> {
        Self::ALL.iter().map(|k| k.name()).collect()
    }

    /// Whether the scheme evolves a frame alongside the base point.
    pub fn is_frame(self) -> bool {
        matches!(
            self,
            SchemeKind::FrameMilstein | SchemeKind::CastellGaines05 | SchemeKind::CastellGaines10
        )
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == s).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "unknown scheme `{s}`; valid names: {}",
                Self::names().join(", ")
            ))
        })
    }
}

/// Truncation of the exponential Lie series in the Castell–Gaines step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    /// `h F_0 + dw_i F_i`.
    Order05,
    /// Adds the Lévy-area brackets `A_ij [F_i, F_j]`, `i < j`.
    Order10,
}

fn check_input<T: Real>(d: usize, inp: &StepInput<T>) -> Result<()> {
    if inp.dim() != d {
        return Err(Error::Dimension {
            expected: d,
            found: inp.dim(),
        });
    }
    Ok(())
}

fn check_point<T: Real>(d: usize, x: &DVector<T>) -> Result<()> {
    if x.len() != d {
        return Err(Error::Dimension {
            expected: d,
            found: x.len(),
        });
    }
    Ok(())
}

/// `x + A_0 h + σ dw`, with `σ` already checked for ellipticity.
fn euler_part<T: Real, S: VectorFieldSystem<T> + ?Sized>(
    sys: &S,
    x: &DVector<T>,
    sigma: &DMatrix<T>,
    inp: &StepInput<T>,
) -> DVector<T> {
    x + sys.drift(x) * inp.h + sigma * &inp.dw
}

/// `S_ij = dw_i dw_j − h δ_ij`.
fn symmetric_square<T: Real>(inp: &StepInput<T>) -> DMatrix<T> {
    let d = inp.dim();
    DMatrix::from_fn(d, d, |i, j| {
        let delta = if i == j { inp.h } else { T::zero() };
        inp.dw[i] * inp.dw[j] - delta
    })
}

/// `x + A_0 h + Σ A_i dw_i`.
pub fn euler_maruyama_step<T: Real, S: VectorFieldSystem<T> + ?Sized>(
    sys: &S,
    x: &DVector<T>,
    inp: &StepInput<T>,
) -> Result<DVector<T>> {
    check_point(sys.dim(), x)?;
    check_input(sys.dim(), inp)?;
    let sigma = sys.frame(x);
    invert_frame(&sigma, x)?;
    Ok(euler_part(sys, x, &sigma, inp))
}

/// Euler–Maruyama plus `Σ (A_i ▷ A_j) J_ij`.
pub fn milstein_step<T: Real, S: VectorFieldSystem<T> + ?Sized>(
    sys: &S,
    x: &DVector<T>,
    inp: &StepInput<T>,
) -> Result<DVector<T>> {
    check_point(sys.dim(), x)?;
    check_input(sys.dim(), inp)?;
    let d = sys.dim();
    let sigma = sys.frame(x);
    invert_frame(&sigma, x)?;
    let mut out = euler_part(sys, x, &sigma, inp);
    for j in 0..d {
        let jac = sys.field_jacobian(j, x);
        // Σ_i (DA_j) A_i J_ij = DA_j (σ J_{·j})
        out += jac * (&sigma * inp.levy.column(j));
    }
    Ok(out)
}

/// Euler–Maruyama plus `½ Σ (A_i ▶ A_j)(dw_i dw_j − h δ_ij)`. Uses no Lévy area.
pub fn cmt_step<T: Real, S: VectorFieldSystem<T> + ?Sized>(
    sys: &S,
    x: &DVector<T>,
    inp: &StepInput<T>,
) -> Result<DVector<T>> {
    check_point(sys.dim(), x)?;
    check_input(sys.dim(), inp)?;
    let geom = LocalGeometry::at(sys, x)?;
    Ok(cmt_from_geometry(sys, &geom, inp))
}

fn cmt_from_geometry<T: Real, S: VectorFieldSystem<T> + ?Sized>(
    sys: &S,
    geom: &LocalGeometry<T>,
    inp: &StepInput<T>,
) -> DVector<T> {
    let d = geom.dim();
    let s = symmetric_square(inp);
    let mut out = euler_part(sys, &geom.point, &geom.frame, inp);
    let half = lit::<T>(0.5);
    for i in 0..d {
        for j in 0..d {
            out += geom.covariant(i, j) * (half * s[(i, j)]);
        }
    }
    out
}

/// The CMT step written through structure constants:
/// `½ [Σ (A_i ▷ A_j) S_ij − Σ K^i_{kj} S_ij A_k]` with `S_ij = dw_i dw_j − h δ_ij`.
pub fn cmt_step_structure_form<T: Real, S: VectorFieldSystem<T> + ?Sized>(
    sys: &S,
    x: &DVector<T>,
    inp: &StepInput<T>,
) -> Result<DVector<T>> {
    check_point(sys.dim(), x)?;
    check_input(sys.dim(), inp)?;
    let d = sys.dim();
    let geom = LocalGeometry::at(sys, x)?;
    let s = symmetric_square(inp);
    let half = lit::<T>(0.5);
    let mut corr = DVector::zeros(d);
    for i in 0..d {
        for j in 0..d {
            corr += geom.directional(i, j) * s[(i, j)];
            for k in 0..d {
                corr -= geom.frame.column(k) * (geom.structure.get(i, k, j) * s[(i, j)]);
            }
        }
    }
    Ok(euler_part(sys, x, &geom.frame, inp) + corr * half)
}

/// Frame-bundle Milstein base step with the frame frozen to a global section
/// `G`: `x + b̃ h + G dw − Σ Γ(G e_i, G e_j) J°_ij`. Only for flat systems.
pub fn theta2d_step<T: Real, S: VectorFieldSystem<T> + ?Sized>(
    sys: &S,
    x: &DVector<T>,
    global_frame: &DMatrix<T>,
    inp: &StepInput<T>,
) -> Result<DVector<T>> {
    if !sys.is_flat() {
        return Err(Error::NotFlat {
            scheme: "theta2d",
            system: sys.name().to_string(),
        });
    }
    let d = sys.dim();
    check_point(d, x)?;
    check_input(d, inp)?;
    if global_frame.shape() != (d, d) {
        return Err(Error::Dimension {
            expected: d,
            found: global_frame.nrows(),
        });
    }
    let geom = LocalGeometry::at(sys, x)?;
    let strat = inp.stratonovich();
    let mut out = x + (sys.drift(x) + geom.laplacian_drift_shift()) * inp.h + global_frame * &inp.dw;
    for i in 0..d {
        let gi = global_frame.column(i).into_owned();
        for j in 0..d {
            let gj = global_frame.column(j).into_owned();
            out -= geom.christoffel(&gi, &gj) * strat[(i, j)];
        }
    }
    Ok(out)
}

/// CMT plus the weak-order-two corrections
/// `½ (L A_0) h² + Σ (L̃ A_i) J_0i + Σ (A_i ▷ A_0) J_i0`.
///
/// `L A_0` is the Itô generator applied to the drift. `L̃ A_i` is the Itô
/// drift of the `i`-th frame vector of the frame-bundle diffusion started at
/// the frame `σ(x)`.
pub fn ac_step<T: Real, S: VectorFieldSystem<T> + ?Sized>(
    sys: &S,
    x: &DVector<T>,
    inp: &StepInput<T>,
) -> Result<DVector<T>> {
    let d = sys.dim();
    check_point(d, x)?;
    check_input(d, inp)?;
    let geom = LocalGeometry::at(sys, x)?;
    let mut out = cmt_from_geometry(sys, &geom, inp);

    let a0 = sys.drift(x);
    let j0 = sys.drift_jacobian(x);
    let mut l_a0 = &j0 * &a0;
    let two = lit::<T>(2.0);
    let half = lit::<T>(0.5);
    for b in 0..d {
        let ab = geom.field(b);
        let eps = fd_step(x) / T::one().max(ab.norm());
        let djac = (sys.drift_jacobian(&(x + &ab * eps)) - sys.drift_jacobian(&(x - &ab * eps))) / (two * eps);
        l_a0 += djac * &ab * half;
    }
    out += l_a0 * (half * inp.h * inp.h);

    let fb = FrameBundle::new(sys);
    let y = FramePoint::new(x.clone(), geom.frame.clone()).to_state();
    let fields = fb.fields_with(&geom, &FramePoint::new(x.clone(), geom.frame.clone()));
    let mut ito_drift = fields.drift.clone();
    for b in 0..d {
        let derivs = fb.noise_derivatives(&y, &fields.noise[b])?;
        ito_drift += &derivs[b] * half;
    }
    let frame_drift = DMatrix::from_column_slice(d, d, &ito_drift.as_slice()[d..]);
    out += frame_drift * &inp.cross0;
    for i in 0..d {
        out += &j0 * geom.frame.column(i) * inp.cross_i[i];
    }
    Ok(out)
}

/// Milstein step of a horizontal diffusion:
/// `y + F_0 h + F_i dw_i + Σ (DF_j F_i)(J_ij + ½ h δ_ij)`, then restoration.
pub fn horizontal_milstein_step<T: Real, H: HorizontalSystem<T> + ?Sized>(
    hs: &H,
    y: &DVector<T>,
    inp: &StepInput<T>,
) -> Result<DVector<T>> {
    let d = hs.noise_dim();
    check_input(d, inp)?;
    check_point(hs.state_dim(), y)?;
    let f = hs.fields(y)?;
    let strat = inp.stratonovich();
    let mut out = y + &f.drift * inp.h;
    for i in 0..d {
        out += &f.noise[i] * inp.dw[i];
    }
    for i in 0..d {
        let derivs = hs.noise_derivatives(y, &f.noise[i])?;
        for (j, dj) in derivs.iter().enumerate() {
            out += dj * strat[(i, j)];
        }
    }
    hs.restore(out)
}

/// [`horizontal_milstein_step`] on the orthonormal frame bundle, with frame
/// re-orthonormalization.
pub fn frame_milstein_step<T: Real, S: VectorFieldSystem<T> + ?Sized>(
    sys: &S,
    fp: &FramePoint<T>,
    inp: &StepInput<T>,
) -> Result<FramePoint<T>> {
    let fb = FrameBundle::new(sys);
    let y = horizontal_milstein_step(&fb, &fp.to_state(), inp)?;
    Ok(FramePoint::from_state(&y, sys.dim()))
}

/// `[V, W] = (DW) V − (DV) W` for noise fields `i`, `j`.
fn noise_bracket<T: Real, H: HorizontalSystem<T> + ?Sized>(
    hs: &H,
    y: &DVector<T>,
    f: &HorizontalFields<T>,
    i: usize,
    j: usize,
) -> Result<DVector<T>> {
    let along_i = hs.noise_derivatives(y, &f.noise[i])?;
    let along_j = hs.noise_derivatives(y, &f.noise[j])?;
    Ok(&along_i[j] - &along_j[i])
}

/// Truncated Lie series field `Ψ(y)` for one step.
pub fn lie_series_field<T: Real, H: HorizontalSystem<T> + ?Sized>(
    hs: &H,
    y: &DVector<T>,
    inp: &StepInput<T>,
    truncation: Truncation,
) -> Result<DVector<T>> {
    let f = hs.fields(y)?;
    let mut psi = &f.drift * inp.h;
    for (i, n) in f.noise.iter().enumerate() {
        psi += n * inp.dw[i];
    }
    if truncation == Truncation::Order10 {
        let d = hs.noise_dim();
        for i in 0..d {
            for j in (i + 1)..d {
                let area = inp.area(i, j);
                if area != T::zero() {
                    psi += noise_bracket(hs, y, &f, i, j)? * area;
                }
            }
        }
    }
    Ok(psi)
}

/// Time-one flow of `Ψ` by classical RK4 with `substeps` steps.
pub fn integrate_flow<T: Real>(
    field: impl Fn(&DVector<T>) -> Result<DVector<T>>,
    y0: &DVector<T>,
    substeps: usize,
) -> Result<DVector<T>> {
    if substeps == 0 {
        return Err(Error::InvalidParameter("ode_substeps must be ≥ 1".into()));
    }
    let dt = T::one() / lit::<T>(substeps as f64);
    let half = lit::<T>(0.5);
    let sixth = dt / lit::<T>(6.0);
    let two = lit::<T>(2.0);
    let mut y = y0.clone();
    for _ in 0..substeps {
        let k1 = field(&y)?;
        let k2 = field(&(&y + &k1 * (dt * half)))?;
        let k3 = field(&(&y + &k2 * (dt * half)))?;
        let k4 = field(&(&y + &k3 * dt))?;
        y += (k1 + k2 * two + k3 * two + k4) * sixth;
    }
    Ok(y)
}

/// Castell–Gaines step: time-one flow of the truncated exponential Lie series.
pub fn horizontal_castell_gaines_step<T: Real, H: HorizontalSystem<T> + ?Sized>(
    hs: &H,
    y: &DVector<T>,
    inp: &StepInput<T>,
    truncation: Truncation,
    ode_substeps: usize,
) -> Result<DVector<T>> {
    check_input(hs.noise_dim(), inp)?;
    check_point(hs.state_dim(), y)?;
    let out = integrate_flow(|z| lie_series_field(hs, z, inp, truncation), y, ode_substeps)?;
    hs.restore(out)
}

pub fn castell_gaines_step<T: Real, S: VectorFieldSystem<T> + ?Sized>(
    sys: &S,
    fp: &FramePoint<T>,
    inp: &StepInput<T>,
    truncation: Truncation,
    ode_substeps: usize,
) -> Result<FramePoint<T>> {
    let fb = FrameBundle::new(sys);
    let y = horizontal_castell_gaines_step(&fb, &fp.to_state(), inp, truncation, ode_substeps)?;
    Ok(FramePoint::from_state(&y, sys.dim()))
}

/// A base point, or a base point with a frame.
#[derive(Debug, Clone, PartialEq)]
pub enum State<T: Real> {
    Base(DVector<T>),
    Frame(FramePoint<T>),
}

impl<T: Real> State<T> {
    pub fn base(&self) -> &DVector<T> {
        match self {
            State::Base(x) => x,
            State::Frame(fp) => &fp.x,
        }
    }

    pub fn frame(&self) -> Option<&DMatrix<T>> {
        match self {
            State::Base(_) => None,
            State::Frame(fp) => Some(&fp.e),
        }
    }
}

/// Tunables shared by all schemes.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeParams<T: Real> {
    pub ode_substeps: usize,
    pub reorthonormalize: bool,
    /// Global section for `theta2d`; the identity when absent.
    pub global_frame: Option<DMatrix<T>>,
}

impl<T: Real> Default for SchemeParams<T> {
    fn default() -> Self {
        SchemeParams {
            ode_substeps: DEFAULT_ODE_SUBSTEPS,
            reorthonormalize: true,
            global_frame: None,
        }
    }
}

/// A scheme bound to a system and its parameters.
pub struct Stepper<'a, T: Real, S: VectorFieldSystem<T> + ?Sized> {
    pub sys: &'a S,
    pub kind: SchemeKind,
    pub params: SchemeParams<T>,
}

impl<'a, T: Real, S: VectorFieldSystem<T> + ?Sized> Stepper<'a, T, S> {
    pub fn new(sys: &'a S, kind: SchemeKind, params: SchemeParams<T>) -> Self {
        Stepper { sys, kind, params }
    }

    pub fn bundle(&self) -> FrameBundle<'a, T, S> {
        FrameBundle::new(self.sys).with_reorthonormalize(self.params.reorthonormalize)
    }

    /// Starting state at `x0`; frame schemes start from the frame `σ(x0)`.
    pub fn initial_state(&self, x0: DVector<T>) -> State<T> {
        if self.kind.is_frame() {
            State::Frame(FramePoint::orthonormal_at(self.sys, x0))
        } else {
            State::Base(x0)
        }
    }

    pub fn step(&self, state: &State<T>, inp: &StepInput<T>) -> Result<State<T>> {
        let d = self.sys.dim();
        match (self.kind, state) {
            (SchemeKind::EulerMaruyama, State::Base(x)) => euler_maruyama_step(self.sys, x, inp).map(State::Base),
            (SchemeKind::Milstein, State::Base(x)) => milstein_step(self.sys, x, inp).map(State::Base),
            (SchemeKind::Cmt, State::Base(x)) => cmt_step(self.sys, x, inp).map(State::Base),
            (SchemeKind::AlvesCruzeiro, State::Base(x)) => ac_step(self.sys, x, inp).map(State::Base),
            (SchemeKind::Theta2d, State::Base(x)) => {
                let g = self
                    .params
                    .global_frame
                    .clone()
                    .unwrap_or_else(|| DMatrix::identity(d, d));
                theta2d_step(self.sys, x, &g, inp).map(State::Base)
            }
            (kind, State::Frame(fp)) if kind.is_frame() => {
                let fb = self.bundle();
                let y = fp.to_state();
                let next = match kind {
                    SchemeKind::FrameMilstein => horizontal_milstein_step(&fb, &y, inp)?,
                    SchemeKind::CastellGaines05 => {
                        horizontal_castell_gaines_step(&fb, &y, inp, Truncation::Order05, self.params.ode_substeps)?
                    }
                    _ => horizontal_castell_gaines_step(&fb, &y, inp, Truncation::Order10, self.params.ode_substeps)?,
                };
                Ok(State::Frame(FramePoint::from_state(&next, d)))
            }
            (kind, _) => Err(Error::InvalidParameter(format!(
                "scheme `{kind}` does not operate on this kind of state"
            ))),
        }
    }
}

/// Folds a scheme over a sequence of steps, recording every state.
pub fn simulate_steps<T: Real, S: VectorFieldSystem<T> + ?Sized>(
    stepper: &Stepper<'_, T, S>,
    init: State<T>,
    steps: impl IntoIterator<Item = StepInput<T>>,
) -> Result<Vec<State<T>>> {
    let mut path = vec![init];
    for (k, inp) in steps.into_iter().enumerate() {
        let next = stepper
            .step(path.last().expect("path starts non-empty"), &inp)
            .map_err(|e| e.at_step(k))?;
        path.push(next);
    }
    Ok(path)
}

/// [`simulate_steps`] over all steps of `incr`.
pub fn simulate_path<T: Real, S: VectorFieldSystem<T> + ?Sized>(
    stepper: &Stepper<'_, T, S>,
    init: State<T>,
    incr: &WienerIncrements<T>,
) -> Result<Vec<State<T>>> {
    if incr.dim() != stepper.sys.dim() {
        return Err(Error::Dimension {
            expected: stepper.sys.dim(),
            found: incr.dim(),
        });
    }
    simulate_steps(stepper, init, incr.steps())
}

/// Terminal state only.
pub fn terminal_state<T: Real, S: VectorFieldSystem<T> + ?Sized>(
    stepper: &Stepper<'_, T, S>,
    init: State<T>,
    steps: impl IntoIterator<Item = StepInput<T>>,
) -> Result<State<T>> {
    let mut state = init;
    for (k, inp) in steps.into_iter().enumerate() {
        state = stepper.step(&state, &inp).map_err(|e| e.at_step(k))?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{sample_increments, TimeGrid};
    use crate::presets::{DiagCommuting, Flat, Gbm1d, NonCommuting2d};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn rotation(theta: f64) -> DMatrix<f64> {
        let (s, c) = theta.sin_cos();
        DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
    }

    fn sample_step(seed: u64, d: usize, h: f64, substeps: usize) -> StepInput<f64> {
        let grid = TimeGrid::new(0.0, h, 1).unwrap();
        sample_increments(seed, 0, grid, d, substeps).unwrap().step(0)
    }

    #[test]
    fn names_round_trip() {
        for k in SchemeKind::ALL {
            assert_eq!(k.name().parse::<SchemeKind>().unwrap(), k);
        }
        let msg = "rk4".parse::<SchemeKind>().unwrap_err().to_string();
        assert!(msg.contains("frame-milstein") && msg.contains("cg10"));
    }

    #[test]
    fn every_scheme_is_exact_on_flat() {
        let sys = Flat::standard();
        let x0 = v(&[0.1, -0.4]);
        let inp = sample_step(3, 2, 0.25, 16);
        let exact = &x0 + &sys.drift * 0.25 + &inp.dw;
        for kind in SchemeKind::ALL {
            let stepper = Stepper::new(&sys, kind, SchemeParams::default());
            let next = stepper.step(&stepper.initial_state(x0.clone()), &inp).unwrap();
            assert!((next.base() - &exact).amax() < 1e-12, "{kind}");
            if let Some(e) = next.frame() {
                assert!((e - DMatrix::identity(2, 2)).amax() < 1e-12, "{kind}");
            }
        }
    }

    #[test]
    fn zero_input_leaves_state_unchanged() {
        let sys = NonCommuting2d::unit();
        let x = v(&[1.3, 0.2]);
        let zero = StepInput::from_increment(DVector::zeros(2), 0.0);
        for f in [euler_maruyama_step, milstein_step, cmt_step, ac_step] {
            assert_eq!(f(&sys, &x, &zero).unwrap(), x);
        }
        let fp = FramePoint::new(x.clone(), sys.frame(&x) * rotation(0.4));
        let fm = frame_milstein_step(&sys, &fp, &zero).unwrap();
        assert!((fm.to_state() - fp.to_state()).amax() < 1e-15);
        let cg = castell_gaines_step(&sys, &fp, &zero, Truncation::Order10, 3).unwrap();
        assert!((cg.to_state() - fp.to_state()).amax() < 1e-15);
    }

    #[test]
    fn milstein_on_geometric_brownian_motion() {
        let sys = Gbm1d::new(0.0);
        let (dw, h) = (0.37, 0.1);
        let inp = StepInput::from_increment(v(&[dw]), h);
        let x = milstein_step(&sys, &v(&[1.0]), &inp).unwrap();
        assert!((x[0] - (1.0 + dw + 0.5 * (dw * dw - h))).abs() < 1e-15);
    }

    #[test]
    fn cmt_equals_symmetrized_milstein_when_fields_commute() {
        let sys = DiagCommuting::standard();
        let x = v(&[0.3, -1.2]);
        let mut inp = sample_step(11, 2, 0.1, 8);
        let cmt = cmt_step(&sys, &x, &inp).unwrap();
        inp.levy = StepInput::from_increment(inp.dw.clone(), inp.h).levy;
        let mil = milstein_step(&sys, &x, &inp).unwrap();
        assert!((cmt - mil).amax() < 1e-12);
    }

    #[test]
    fn structure_form_of_cmt_agrees() {
        let sys = NonCommuting2d::unit();
        for seed in 0..20 {
            let x = v(&[0.5 + 0.07 * seed as f64, -0.3 + 0.05 * seed as f64]);
            let inp = sample_step(seed, 2, 0.05, 4);
            let a = cmt_step(&sys, &x, &inp).unwrap();
            let b = cmt_step_structure_form(&sys, &x, &inp).unwrap();
            assert!((a - b).amax() < 1e-10);
        }
    }

    #[test]
    fn frame_milstein_base_is_cmt_with_rotated_noise() {
        // Lévy area drops out of the base part because Γ is symmetric.
        let sys = NonCommuting2d::unit();
        let x = v(&[1.4, 0.1]);
        let r = rotation(0.9);
        let fp = FramePoint::new(x.clone(), sys.frame(&x) * &r);
        let inp = sample_step(5, 2, 0.01, 32);
        let fm = frame_milstein_step(&sys, &fp, &inp).unwrap();
        let cmt = cmt_step(&sys, &x, &inp.rotated(&r)).unwrap();
        assert!((fm.x - cmt).amax() < 1e-9);
    }

    #[test]
    fn theta2d_reductions() {
        let sys = Flat::standard();
        let x = v(&[0.0, 1.0]);
        let inp = sample_step(2, 2, 0.5, 8);
        let id = theta2d_step(&sys, &x, &DMatrix::identity(2, 2), &inp).unwrap();
        assert!((id - milstein_step(&sys, &x, &inp).unwrap()).amax() < 1e-15);
        let r = rotation(1.1);
        let rot = theta2d_step(&sys, &x, &r, &inp).unwrap();
        let em = euler_maruyama_step(&sys, &x, &StepInput::from_increment(&r * &inp.dw, inp.h)).unwrap();
        assert!((rot - em).amax() < 1e-15);
        let err = theta2d_step(&NonCommuting2d::unit(), &x, &r, &inp).unwrap_err();
        assert!(matches!(err, Error::NotFlat { .. }));
    }

    #[test]
    fn ac_reductions() {
        let sys = Flat::standard();
        let x = v(&[0.4, 0.4]);
        let inp = sample_step(8, 2, 0.2, 8);
        let ac = ac_step(&sys, &x, &inp).unwrap();
        assert!((ac - euler_maruyama_step(&sys, &x, &inp).unwrap()).amax() < 1e-14);
    }

    #[test]
    fn ac_on_geometric_brownian_motion_matches_ito_taylor() {
        // Order-two Itô–Taylor step for dX = μX dt + X dB.
        let mu = 0.3;
        let sys = Gbm1d::new(mu);
        let x0 = 1.7;
        let inp = sample_step(21, 1, 0.1, 16);
        let (dw, h, j0, j1) = (inp.dw[0], inp.h, inp.cross0[0], inp.cross_i[0]);
        let expected = x0
            + mu * x0 * h
            + x0 * dw
            + 0.5 * x0 * (dw * dw - h)
            + 0.5 * mu * mu * x0 * h * h
            + mu * x0 * j0
            + mu * x0 * j1;
        let ac = ac_step(&sys, &v(&[x0]), &inp).unwrap();
        assert!((ac[0] - expected).abs() < 1e-8, "{} vs {expected}", ac[0]);
    }

    #[test]
    fn castell_gaines_order05_on_flat_is_one_substep_exact() {
        let sys = Flat::standard();
        let fp = FramePoint::new(v(&[1.0, 2.0]), DMatrix::identity(2, 2));
        let inp = sample_step(4, 2, 0.3, 8);
        let cg = castell_gaines_step(&sys, &fp, &inp, Truncation::Order05, 1).unwrap();
        let em = euler_maruyama_step(&sys, &fp.x, &inp).unwrap();
        assert!((cg.x - em).amax() < 1e-14);
    }

    #[test]
    fn castell_gaines_flow_converges_at_fourth_order() {
        let sys = NonCommuting2d::unit();
        let fb = FrameBundle::new(&sys).with_reorthonormalize(false);
        let fp = FramePoint::orthonormal_at(&sys, v(&[1.0, 0.0]));
        let inp = sample_step(9, 2, 0.25, 16);
        let y = fp.to_state();
        let run = |n| horizontal_castell_gaines_step(&fb, &y, &inp, Truncation::Order05, n).unwrap();
        let fine = run(256);
        let e1 = (run(4) - &fine).amax();
        let e2 = (run(8) - &fine).amax();
        let ratio = e1 / e2;
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn zero_steps_give_initial_state() {
        let sys = NonCommuting2d::standard();
        let stepper = Stepper::new(&sys, SchemeKind::Cmt, SchemeParams::default());
        let init = stepper.initial_state(v(&[1.0, 0.0]));
        let path = simulate_steps(&stepper, init.clone(), std::iter::empty()).unwrap();
        assert_eq!(path, vec![init]);
    }

    #[test]
    fn failures_carry_the_step_index() {
        let sys = NonCommuting2d::unit();
        let stepper = Stepper::new(&sys, SchemeKind::EulerMaruyama, SchemeParams::default());
        let push = StepInput::from_increment(v(&[-0.5, 0.0]), 0.0);
        let err = simulate_steps(&stepper, State::Base(v(&[1.0, 0.0])), vec![push.clone(); 3]).unwrap_err();
        match err {
            Error::Step { step, .. } => assert_eq!(step, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let sys = NonCommuting2d::unit();
        let inp = StepInput::from_increment(v(&[0.1]), 0.1);
        assert!(matches!(
            cmt_step(&sys, &v(&[1.0, 0.0]), &inp),
            Err(Error::Dimension { .. })
        ));
    }
}
