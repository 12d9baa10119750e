//! Strong, weak and distributional error estimates over step-size ladders.
//!
//! All runs of one path share a single fine Brownian path: coarser drivers
//! are obtained from it with Chen's relations.
//!
//! The frame-bundle reference is driven by `B`, but its base point follows
//! the rotated motion `B̃ = ∫ R dB`, where `R` is the reference frame read in
//! the section `σ`. Base schemes are therefore fed `R(t_n)`-rotated steps and
//! frame schemes are fed steps rotated by `R_sᵀ R(t_n)`, with `R_s` their own
//! frame. These rotations are adapted, so every scheme still sees a Brownian
//! motion and keeps its exact law; the pathwise error is then a coupling
//! bound on the Wasserstein-2 distance between the scheme and the reference.

use std::fmt;
use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::bundle::HorizontalSystem;
use crate::error::{Error, Result};
use crate::geometry::VectorFieldSystem;
use crate::linalg::polar_factor;
use crate::noise::{chen_coarsen, sample_increments, StepInput, TimeGrid, WienerIncrements};
use crate::schemes::{SchemeKind, SchemeParams, State, Stepper};

/// Number of batches behind every batch-means standard error.
pub const DEFAULT_BATCHES: usize = 20;

/// Errors below this are treated as exact and left out of order fits.
pub const EXACTNESS_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    StrongCoupled,
    Weak,
    Wasserstein2,
}

impl ErrorKind {
    pub fn name(self) -> &'static str {
        match self {
            ErrorKind::StrongCoupled => "strong-coupled",
            ErrorKind::Weak => "weak",
            ErrorKind::Wasserstein2 => "wasserstein2",
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorEntry {
    pub h: f64,
    pub error: f64,
    pub stderr: f64,
}

/// Errors of one scheme along a ladder, finest step last.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    pub kind: ErrorKind,
    pub scheme: String,
    pub entries: Vec<ErrorEntry>,
}

impl ErrorSeries {
    pub fn new(kind: ErrorKind, scheme: impl Into<String>, entries: Vec<ErrorEntry>) -> Result<Self> {
        for w in entries.windows(2) {
            if !(w[1].h < w[0].h) {
                return Err(Error::InvalidParameter("ladder steps must decrease strictly".into()));
            }
        }
        if entries
            .iter()
            .any(|e| !(e.h > 0.0) || !(e.error >= 0.0) || !(e.stderr >= 0.0))
        {
            return Err(Error::InvalidParameter(
                "entries need positive h and non-negative error and stderr".into(),
            ));
        }
        Ok(ErrorSeries {
            kind,
            scheme: scheme.into(),
            entries,
        })
    }

    /// `h,error,stderr` rows followed by `# slope=<v> r2=<v> kind=<v>`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "h,error,stderr")?;
        for e in &self.entries {
            writeln!(out, "{:.16e},{:.16e},{:.16e}", e.h, e.error, e.stderr)?;
        }
        match fit_order(self) {
            Ok(fit) => writeln!(
                out,
                "# slope={:.16e} r2={:.16e} kind={}",
                fit.slope, fit.r_squared, self.kind
            ),
            Err(_) => writeln!(out, "# slope=nan r2=nan kind={}", self.kind),
        }
    }
}

/// Least-squares line through `(log h, log error)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Steps whose error sat below [`EXACTNESS_FLOOR`].
    pub excluded: Vec<f64>,
}

pub fn fit_order(series: &ErrorSeries) -> Result<OrderFit> {
    let (used, excluded): (Vec<&ErrorEntry>, Vec<&ErrorEntry>) =
        series.entries.iter().partition(|e| e.error >= EXACTNESS_FLOOR);
    if used.len() < 3 {
        return Err(Error::TooFewPoints { usable: used.len() });
    }
    let n = used.len() as f64;
    let xs: Vec<f64> = used.iter().map(|e| e.h.ln()).collect();
    let ys: Vec<f64> = used.iter().map(|e| e.error.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("ladder needs distinct steps".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Ok(OrderFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        excluded: excluded.iter().map(|e| e.h).collect(),
    })
}

/// Exact empirical W2 distance in one dimension. The larger sample is
/// truncated to the size of the smaller one.
pub fn wasserstein2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len().min(b.len());
    if n == 0 {
        return Err(Error::InvalidParameter("empty sample".into()));
    }
    let sorted = |s: &[f64]| {
        let mut v = s[..n].to_vec();
        v.sort_by(f64::total_cmp);
        v
    };
    let (sa, sb) = (sorted(a), sorted(b));
    let ms = sa.iter().zip(&sb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n as f64;
    Ok(ms.sqrt())
}

/// Mean and batch-means standard error over contiguous batches.
pub fn batch_mean(values: &[f64], batches: usize) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let b = batches.min(n);
    if b < 2 {
        return (mean, 0.0);
    }
    let means: Vec<f64> = (0..b)
        .map(|k| {
            let chunk = &values[k * n / b..(k + 1) * n / b];
            chunk.iter().sum::<f64>() / chunk.len() as f64
        })
        .collect();
    let mm = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|m| (m - mm).powi(2)).sum::<f64>() / (b - 1) as f64;
    (mean, (var / b as f64).sqrt())
}

/// Settings shared by the coupled strong and the distributional estimators.
#[derive(Debug, Clone)]
pub struct StrongConfig {
    pub t_end: f64,
    /// Ladder steps; each must be an integer multiple of `h_ref`.
    pub ladder: Vec<f64>,
    pub h_ref: f64,
    /// Either `FrameMilstein` or `Milstein`.
    pub reference: SchemeKind,
    /// Lévy-area substeps on the reference grid.
    pub substeps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub params: SchemeParams<f64>,
    pub batches: usize,
}

impl StrongConfig {
    /// Frame-Milstein reference with default scheme parameters.
    pub fn new(t_end: f64, ladder: Vec<f64>, h_ref: f64, substeps: usize, n_paths: usize, seed: u64) -> Self {
        StrongConfig {
            t_end,
            ladder,
            h_ref,
            reference: SchemeKind::FrameMilstein,
            substeps,
            n_paths,
            seed,
            params: SchemeParams::default(),
            batches: DEFAULT_BATCHES,
        }
    }
}

/// `h / h_ref` as an exact integer, if it is one.
fn ratio(h: f64, h_ref: f64) -> Option<usize> {
    let r = h / h_ref;
    let k = r.round();
    if k >= 1.0 && (r - k).abs() <= 1e-9 * k {
        Some(k as usize)
    } else {
        None
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Ladder sorted by decreasing step, with reference ratios.
/// A ladder step and its ratio to the finest grid.
type Rung = (f64, usize);

fn checked_ladder(ladder: &[f64], h_ref: f64, t_end: f64) -> Result<Vec<Rung>> {
    if ladder.is_empty() {
        return Err(Error::InvalidParameter("empty ladder".into()));
    }
    let mut out = Vec::with_capacity(ladder.len());
    for &h in ladder {
        let r = ratio(h, h_ref).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "ladder step {h} is not a multiple of the reference step {h_ref}"
            ))
        })?;
        TimeGrid::with_step(t_end, h)?;
        out.push((h, r));
    }
    out.sort_by(|a, b| b.0.total_cmp(&a.0));
    if out.windows(2).any(|w| w[0].1 == w[1].1) {
        return Err(Error::InvalidParameter("ladder steps must be distinct".into()));
    }
    Ok(out)
}

/// Coarse drivers for every ladder ratio, coarsening from the closest finer level.
fn coarsen_all(fine: &WienerIncrements<f64>, ratios: &[usize]) -> Result<Vec<WienerIncrements<f64>>> {
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by_key(|&i| ratios[i]);
    let mut out: Vec<Option<WienerIncrements<f64>>> = vec![None; ratios.len()];
    let mut prev: Option<(usize, usize)> = None;
    for &i in &order {
        let r = ratios[i];
        let coarse = match prev {
            Some((pr, pi)) if r.is_multiple_of(pr) => chen_coarsen(out[pi].as_ref().expect("built"), r / pr)?,
            _ => chen_coarsen(fine, r)?,
        };
        out[i] = Some(coarse);
        prev = Some((r, i));
    }
    Ok(out.into_iter().map(|w| w.expect("built")).collect())
}

/// Terminal base points of one path: reference first, then `[scheme][rung]`.
struct PathOutcome {
    reference: DVector<f64>,
    schemes: Vec<Vec<DVector<f64>>>,
}

fn run_coupled_path<S: VectorFieldSystem<f64> + ?Sized>(
    sys: &S,
    schemes: &[SchemeKind],
    x0: &DVector<f64>,
    cfg: &StrongConfig,
    rungs: &[(f64, usize)],
    stride: usize,
    path: usize,
) -> Result<PathOutcome> {
    let d = sys.dim();
    let grid = TimeGrid::with_step(cfg.t_end, cfg.h_ref)?;
    let fine = sample_increments::<f64>(cfg.seed, path as u64, grid, d, cfg.substeps)?;

    let reference = Stepper::new(sys, cfg.reference, cfg.params.clone());
    let ref_bundle = reference.bundle();
    let mut state = reference.initial_state(x0.clone());
    let rotation_of = |s: &State<f64>| -> Result<DMatrix<f64>> {
        match s {
            State::Frame(fp) => ref_bundle.frame_rotation(&fp.to_state()),
            State::Base(_) => Ok(DMatrix::identity(d, d)),
        }
    };
    // reference frame rotations at multiples of `stride`
    let mut rotations = vec![rotation_of(&state)?];
    for k in 0..fine.n_steps() {
        state = reference.step(&state, &fine.step(k)).map_err(|e| e.at_step(k))?;
        if (k + 1) % stride == 0 {
            rotations.push(rotation_of(&state)?);
        }
    }
    let ref_terminal = state.base().clone();
    let frame_reference = cfg.reference.is_frame();

    let coarse = coarsen_all(&fine, &rungs.iter().map(|r| r.1).collect::<Vec<_>>())?;
    let mut results = Vec::with_capacity(schemes.len());
    for &kind in schemes {
        let stepper = Stepper::new(sys, kind, cfg.params.clone());
        let bundle = stepper.bundle();
        let mut per_rung = Vec::with_capacity(rungs.len());
        for (rung, incr) in rungs.iter().zip(&coarse) {
            let r = rung.1;
            let mut s = stepper.initial_state(x0.clone());
            for n in 0..incr.n_steps() {
                let step = incr.step(n);
                let r_ref = &rotations[n * r / stride];
                let inp: StepInput<f64> = match &s {
                    _ if !frame_reference => step,
                    State::Base(_) => step.rotated(r_ref),
                    State::Frame(fp) => {
                        let r_s = bundle.frame_rotation(&fp.to_state())?;
                        if r_s == *r_ref {
                            step
                        } else {
                            step.rotated(&polar_factor(&(r_s.transpose() * r_ref)))
                        }
                    }
                };
                s = stepper.step(&s, &inp).map_err(|e| e.at_step(n))?;
            }
            per_rung.push(s.base().clone());
        }
        results.push(per_rung);
    }
    Ok(PathOutcome {
        reference: ref_terminal,
        schemes: results,
    })
}

fn run_coupled<S: VectorFieldSystem<f64> + ?Sized>(
    sys: &S,
    schemes: &[SchemeKind],
    x0: &DVector<f64>,
    cfg: &StrongConfig,
) -> Result<(Vec<Rung>, Vec<PathOutcome>)> {
    if !matches!(cfg.reference, SchemeKind::FrameMilstein | SchemeKind::Milstein) {
        return Err(Error::InvalidParameter(format!(
            "reference must be frame-milstein or milstein, not `{}`",
            cfg.reference
        )));
    }
    if cfg.n_paths == 0 {
        return Err(Error::InvalidParameter("need at least one path".into()));
    }
    if x0.len() != sys.dim() {
        return Err(Error::Dimension {
            expected: sys.dim(),
            found: x0.len(),
        });
    }
    TimeGrid::with_step(cfg.t_end, cfg.h_ref)?;
    let rungs = checked_ladder(&cfg.ladder, cfg.h_ref, cfg.t_end)?;
    let stride = rungs.iter().fold(0, |g, r| gcd(g, r.1));
    let outcomes: Vec<Result<PathOutcome>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| run_coupled_path(sys, schemes, x0, cfg, &rungs, stride, p))
        .collect();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((rungs, outcomes))
}

/// Root-mean-square terminal error of several schemes against one shared
/// reference run per path.
pub fn coupled_strong_errors<S: VectorFieldSystem<f64> + ?Sized>(
    sys: &S,
    schemes: &[SchemeKind],
    x0: &DVector<f64>,
    cfg: &StrongConfig,
) -> Result<Vec<ErrorSeries>> {
    let (rungs, outcomes) = run_coupled(sys, schemes, x0, cfg)?;
    schemes
        .iter()
        .enumerate()
        .map(|(si, kind)| {
            let entries = rungs
                .iter()
                .enumerate()
                .map(|(ri, &(h, _))| {
                    let sq: Vec<f64> = outcomes
                        .iter()
                        .map(|o| (&o.schemes[si][ri] - &o.reference).norm_squared())
                        .collect();
                    let (m, se) = batch_mean(&sq, cfg.batches);
                    let error = m.sqrt();
                    let stderr = if error > 0.0 { se / (2.0 * error) } else { 0.0 };
                    ErrorEntry { h, error, stderr }
                })
                .collect();
            ErrorSeries::new(ErrorKind::StrongCoupled, kind.name(), entries)
        })
        .collect()
}

pub fn coupled_strong_error<S: VectorFieldSystem<f64> + ?Sized>(
    sys: &S,
    scheme: SchemeKind,
    x0: &DVector<f64>,
    cfg: &StrongConfig,
) -> Result<ErrorSeries> {
    Ok(coupled_strong_errors(sys, &[scheme], x0, cfg)?.remove(0))
}

/// Empirical W2 distance between the laws of `f(X^h_T)` and `f(X^ref_T)`.
/// The standard error is the spread of per-batch distances.
pub fn distributional_errors<S: VectorFieldSystem<f64> + ?Sized>(
    sys: &S,
    schemes: &[SchemeKind],
    x0: &DVector<f64>,
    f: &(dyn Fn(&DVector<f64>) -> f64 + Sync),
    cfg: &StrongConfig,
) -> Result<Vec<ErrorSeries>> {
    let (rungs, outcomes) = run_coupled(sys, schemes, x0, cfg)?;
    let reference: Vec<f64> = outcomes.iter().map(|o| f(&o.reference)).collect();
    let n = reference.len();
    let b = cfg.batches.min(n).max(1);
    schemes
        .iter()
        .enumerate()
        .map(|(si, kind)| {
            let entries = rungs
                .iter()
                .enumerate()
                .map(|(ri, &(h, _))| {
                    let samples: Vec<f64> = outcomes.iter().map(|o| f(&o.schemes[si][ri])).collect();
                    let error = wasserstein2_1d(&samples, &reference)?;
                    let per_batch: Vec<f64> = (0..b)
                        .map(|k| {
                            let range = k * n / b..(k + 1) * n / b;
                            wasserstein2_1d(&samples[range.clone()], &reference[range])
                        })
                        .collect::<Result<_>>()?;
                    let (_, stderr) = batch_mean(&per_batch, b);
                    Ok(ErrorEntry { h, error, stderr })
                })
                .collect::<Result<Vec<_>>>()?;
            ErrorSeries::new(ErrorKind::Wasserstein2, kind.name(), entries)
        })
        .collect()
}

/// Settings for [`weak_errors`].
#[derive(Debug, Clone)]
pub struct WeakConfig {
    pub t_end: f64,
    /// Every step must be an integer multiple of the finest one.
    pub ladder: Vec<f64>,
    /// Substeps per step of the finest grid.
    pub substeps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub params: SchemeParams<f64>,
    pub batches: usize,
    /// Pair every path with its reflection `−B` and average each pair.
    pub antithetic: bool,
    /// Importance sampling drift `θ`: paths are drawn as `W_t + θ t` and
    /// reweighted by `exp(−θ·B_T + |θ|² T / 2)`.
    pub tilt: Option<Vec<f64>>,
}

impl WeakConfig {
    pub fn new(t_end: f64, ladder: Vec<f64>, substeps: usize, n_paths: usize, seed: u64) -> Self {
        WeakConfig {
            t_end,
            ladder,
            substeps,
            n_paths,
            seed,
            params: SchemeParams::default(),
            batches: DEFAULT_BATCHES,
            antithetic: false,
            tilt: None,
        }
    }
}

/// A mean-`reference_value` statistic of the driving path, subtracted per path.
pub type ControlVariate<'a> = &'a (dyn Fn(&DVector<f64>) -> f64 + Sync);

/// `|E f(X^h_T) − reference_value|` with common random numbers across the
/// ladder.
///
/// With `control = Some(g)`, each path contributes `f(X^h_T) − g(B_T)`; `g`
/// must have expectation exactly `reference_value` (typically `f` of the
/// exact solution driven by the same `B`). Without it each path contributes
/// `f(X^h_T) − reference_value`. With `antithetic`, paths come in pairs
/// `(B, −B)` whose contributions are averaged before batching. With `tilt`,
/// every contribution (control included) is multiplied by the likelihood
/// ratio of the drifted path; the reflection acts on the undrifted path.
pub fn weak_errors<S: VectorFieldSystem<f64> + ?Sized>(
    sys: &S,
    schemes: &[SchemeKind],
    x0: &DVector<f64>,
    f: &(dyn Fn(&DVector<f64>) -> f64 + Sync),
    reference_value: f64,
    control: Option<ControlVariate<'_>>,
    cfg: &WeakConfig,
) -> Result<Vec<ErrorSeries>> {
    if cfg.n_paths == 0 {
        return Err(Error::InvalidParameter("need at least one path".into()));
    }
    if cfg.antithetic && !cfg.n_paths.is_multiple_of(2) {
        return Err(Error::InvalidParameter(
            "antithetic sampling needs an even path count".into(),
        ));
    }
    let h_min = cfg.ladder.iter().copied().fold(f64::INFINITY, f64::min);
    let rungs = checked_ladder(&cfg.ladder, h_min, cfg.t_end)?;
    let grid = TimeGrid::with_step(cfg.t_end, h_min)?;
    let d = sys.dim();
    if let Some(theta) = &cfg.tilt {
        if theta.len() != d {
            return Err(Error::Dimension {
                expected: d,
                found: theta.len(),
            });
        }
    }
    let steppers: Vec<_> = schemes
        .iter()
        .map(|&k| Stepper::new(sys, k, cfg.params.clone()))
        .collect();
    let evaluate = |raw: &WienerIncrements<f64>| -> Result<Vec<f64>> {
        let (fine, weight) = match &cfg.tilt {
            Some(theta) => {
                let fine = raw.tilted(theta)?;
                let b_t = fine.total_increment();
                let th = DVector::from_column_slice(theta);
                let log_w = -th.dot(&b_t) + 0.5 * th.norm_squared() * cfg.t_end;
                (fine, log_w.exp())
            }
            None => (raw.clone(), 1.0),
        };
        let fine = &fine;
        let (offset, offset_weight) = match control {
            Some(g) => (g(&fine.total_increment()), weight),
            None => (reference_value, 1.0),
        };
        let coarse = coarsen_all(fine, &rungs.iter().map(|r| r.1).collect::<Vec<_>>())?;
        let mut out = Vec::with_capacity(schemes.len() * rungs.len());
        for stepper in &steppers {
            for incr in &coarse {
                let mut s = stepper.initial_state(x0.clone());
                for n in 0..incr.n_steps() {
                    s = stepper.step(&s, &incr.step(n)).map_err(|e| e.at_step(n))?;
                }
                out.push(weight * f(s.base()) - offset_weight * offset);
            }
        }
        Ok(out)
    };
    let per_sample = |p: usize| -> Result<Vec<f64>> {
        let fine = sample_increments::<f64>(cfg.seed, p as u64, grid, d, cfg.substeps)?;
        let mut v = evaluate(&fine)?;
        if cfg.antithetic {
            for (a, b) in v.iter_mut().zip(evaluate(&fine.reflected())?) {
                *a = 0.5 * (*a + b);
            }
        }
        Ok(v)
    };
    let samples = if cfg.antithetic { cfg.n_paths / 2 } else { cfg.n_paths };
    let values: Vec<Result<Vec<f64>>> = (0..samples).into_par_iter().map(per_sample).collect();
    let values = values.into_iter().collect::<Result<Vec<_>>>()?;
    schemes
        .iter()
        .enumerate()
        .map(|(si, kind)| {
            let entries = rungs
                .iter()
                .enumerate()
                .map(|(ri, &(h, _))| {
                    let col: Vec<f64> = values.iter().map(|v| v[si * rungs.len() + ri]).collect();
                    let (m, se) = batch_mean(&col, cfg.batches);
                    ErrorEntry {
                        h,
                        error: m.abs(),
                        stderr: se,
                    }
                })
                .collect();
            ErrorSeries::new(ErrorKind::Weak, kind.name(), entries)
        })
        .collect()
}

pub fn weak_error<S: VectorFieldSystem<f64> + ?Sized>(
    sys: &S,
    scheme: SchemeKind,
    x0: &DVector<f64>,
    f: &(dyn Fn(&DVector<f64>) -> f64 + Sync),
    reference_value: f64,
    cfg: &WeakConfig,
) -> Result<ErrorSeries> {
    Ok(weak_errors(sys, &[scheme], x0, f, reference_value, None, cfg)?.remove(0))
}

/// Ladder `h = 2^{-a}, …, 2^{-b}`.
pub fn dyadic_ladder(a: u32, b: u32) -> Vec<f64> {
    (a..=b).map(|k| 2f64.powi(-(k as i32))).collect()
}
