//! Brownian driving data on uniform grids.
//!
//! Each step carries the increment `ΔB`, the Itô iterated integrals
//! `J_ij = ∫∫_{s<u} dB^i_s dB^j_u`, and the time/space cross integrals
//! `J_0i = ∫ (s − t_k) dB^i_s` and `J_i0 = ∫ (B^i_s − B^i_{t_k}) ds`.
//! Iterated integrals come from left-point sums over `M` Gaussian substeps;
//! the symmetric part of `J` is pinned to `½(ΔB^i ΔB^j − h δ_ij)` so the
//! shuffle identity holds by construction.
//!
//! Randomness is counter based: the substeps of step `k` are a pure function
//! of `(seed, stream, k)`, so paths can be regenerated independently and in
//! any order.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Substep count used when the caller has no preference.
pub const DEFAULT_SUBSTEPS: usize = 64;

/// Uniform grid `t_start + k·h`, `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_start: f64,
    t_end: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidParameter("time grid needs at least one step".into()));
        }
        if !(t_end > t_start) || !t_start.is_finite() || !t_end.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "time grid needs t_end > t_start, got [{t_start}, {t_end}]"
            )));
        }
        Ok(TimeGrid {
            t_start,
            t_end,
            n_steps,
        })
    }

    /// Grid on `[0, t_end]` with step `h`; `t_end / h` must be an integer.
    pub fn with_step(t_end: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::InvalidParameter(format!("step must be positive, got {h}")));
        }
        let n = (t_end / h).round();
        if n < 1.0 || ((n * h) - t_end).abs() > 1e-9 * t_end.abs().max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "step {h} does not divide horizon {t_end}"
            )));
        }
        TimeGrid::new(0.0, t_end, n as usize)
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn h(&self) -> f64 {
        (self.t_end - self.t_start) / self.n_steps as f64
    }

    /// Time of grid point `k`.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t_end
        } else {
            self.t_start + k as f64 * self.h()
        }
    }

    /// The same interval split into `n_steps / factor` steps.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.n_steps.is_multiple_of(factor) {
            return Err(Error::InvalidParameter(format!(
                "coarsening factor {factor} does not divide {} steps",
                self.n_steps
            )));
        }
        TimeGrid::new(self.t_start, self.t_end, self.n_steps / factor)
    }
}

/// Driving data for one step, as consumed by the one-step schemes.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInput<T: Real> {
    pub dw: DVector<T>,
    /// Itô iterated integrals `J_ij`.
    pub levy: DMatrix<T>,
    /// `J_0i = ∫ (s − t_k) dB^i_s`.
    pub cross0: DVector<T>,
    /// `J_i0 = ∫ (B^i_s − B^i_{t_k}) ds`.
    pub cross_i: DVector<T>,
    pub h: T,
}

impl<T: Real> StepInput<T> {
    /// Input whose iterated integrals are the area-free values implied by `dw`.
    pub fn from_increment(dw: DVector<T>, h: T) -> Self {
        let d = dw.len();
        let half = lit::<T>(0.5);
        let levy = DMatrix::from_fn(d, d, |i, j| {
            let delta = if i == j { h } else { T::zero() };
            half * (dw[i] * dw[j] - delta)
        });
        let cross0 = &dw * (h * half);
        let cross_i = &dw * h - &cross0;
        StepInput {
            dw,
            levy,
            cross0,
            cross_i,
            h,
        }
    }

    pub fn dim(&self) -> usize {
        self.dw.len()
    }

    /// Lévy area `½(J_ij − J_ji)`.
    pub fn area(&self, i: usize, j: usize) -> T {
        lit::<T>(0.5) * (self.levy[(i, j)] - self.levy[(j, i)])
    }

    /// `J_ij + ½ h δ_ij`, the Stratonovich iterated integrals.
    pub fn stratonovich(&self) -> DMatrix<T> {
        let half_h = lit::<T>(0.5) * self.h;
        let mut s = self.levy.clone();
        for i in 0..self.dim() {
            s[(i, i)] += half_h;
        }
        s
    }

    /// The same step for the rotated Brownian motion `B' = Q B`.
    pub fn rotated(&self, q: &DMatrix<T>) -> Self {
        StepInput {
            dw: q * &self.dw,
            levy: q * &self.levy * q.transpose(),
            cross0: q * &self.cross0,
            cross_i: q * &self.cross_i,
            h: self.h,
        }
    }

    /// Largest violation of the shuffle and integration-by-parts identities.
    pub fn identity_residual(&self) -> T {
        let d = self.dim();
        let mut r = T::zero();
        for i in 0..d {
            for j in 0..d {
                let delta = if i == j { self.h } else { T::zero() };
                let lhs = self.levy[(i, j)] + self.levy[(j, i)];
                r = r.max((lhs - (self.dw[i] * self.dw[j] - delta)).abs());
            }
            r = r.max((self.cross0[i] + self.cross_i[i] - self.h * self.dw[i]).abs());
        }
        r
    }
}

/// Increments and iterated integrals of one Brownian path on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerIncrements<T: Real> {
    dim: usize,
    grid: TimeGrid,
    substeps: usize,
    dw: Vec<T>,
    levy: Vec<T>,
    cross0: Vec<T>,
    cross_i: Vec<T>,
}

impl<T: Real> WienerIncrements<T> {
    /// Assembles increments from per-step inputs.
    pub fn from_steps(grid: TimeGrid, substeps: usize, steps: &[StepInput<T>]) -> Result<Self> {
        if steps.len() != grid.n_steps() {
            return Err(Error::Dimension {
                expected: grid.n_steps(),
                found: steps.len(),
            });
        }
        let dim = steps.first().map_or(0, |s| s.dim());
        if dim == 0 {
            return Err(Error::InvalidParameter("increments need dim ≥ 1".into()));
        }
        let mut out = WienerIncrements::empty(dim, grid, substeps);
        for s in steps {
            if s.dim() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    found: s.dim(),
                });
            }
            out.push(s);
        }
        Ok(out)
    }

    fn empty(dim: usize, grid: TimeGrid, substeps: usize) -> Self {
        let n = grid.n_steps();
        WienerIncrements {
            dim,
            grid,
            substeps,
            dw: Vec::with_capacity(n * dim),
            levy: Vec::with_capacity(n * dim * dim),
            cross0: Vec::with_capacity(n * dim),
            cross_i: Vec::with_capacity(n * dim),
        }
    }

    fn push(&mut self, s: &StepInput<T>) {
        let d = self.dim;
        self.dw.extend(s.dw.iter().copied());
        for i in 0..d {
            for j in 0..d {
                self.levy.push(s.levy[(i, j)]);
            }
        }
        self.cross0.extend(s.cross0.iter().copied());
        self.cross_i.extend(s.cross_i.iter().copied());
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    /// Substeps per step used to approximate the iterated integrals.
    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn h(&self) -> T {
        lit(self.grid.h())
    }

    pub fn dw(&self, k: usize) -> &[T] {
        &self.dw[k * self.dim..(k + 1) * self.dim]
    }

    pub fn levy(&self, k: usize) -> DMatrix<T> {
        let d = self.dim;
        DMatrix::from_row_slice(d, d, &self.levy[k * d * d..(k + 1) * d * d])
    }

    pub fn cross0(&self, k: usize) -> &[T] {
        &self.cross0[k * self.dim..(k + 1) * self.dim]
    }

    pub fn cross_i(&self, k: usize) -> &[T] {
        &self.cross_i[k * self.dim..(k + 1) * self.dim]
    }

    pub fn step(&self, k: usize) -> StepInput<T> {
        StepInput {
            dw: DVector::from_column_slice(self.dw(k)),
            levy: self.levy(k),
            cross0: DVector::from_column_slice(self.cross0(k)),
            cross_i: DVector::from_column_slice(self.cross_i(k)),
            h: self.h(),
        }
    }

    pub fn steps(&self) -> impl ExactSizeIterator<Item = StepInput<T>> + '_ {
        (0..self.n_steps()).map(move |k| self.step(k))
    }

    /// `B(t_end) − B(t_start)`.
    pub fn total_increment(&self) -> DVector<T> {
        let mut total = DVector::zeros(self.dim);
        for k in 0..self.n_steps() {
            for (t, v) in total.iter_mut().zip(self.dw(k)) {
                *t += *v;
            }
        }
        total
    }

    /// Increments of the reflected path `−B`. Iterated integrals of two
    /// Brownian factors are unchanged; the others change sign.
    pub fn reflected(&self) -> Self {
        let mut out = self.clone();
        for v in out
            .dw
            .iter_mut()
            .chain(out.cross0.iter_mut())
            .chain(out.cross_i.iter_mut())
        {
            *v = -*v;
        }
        out
    }

    /// Increments of `B_t + θ t`, i.e. the same path with a constant drift.
    pub fn tilted(&self, theta: &[T]) -> Result<Self> {
        let d = self.dim;
        if theta.len() != d {
            return Err(Error::Dimension {
                expected: d,
                found: theta.len(),
            });
        }
        let h = self.h();
        let half_h2 = lit::<T>(0.5) * h * h;
        let mut out = self.clone();
        for k in 0..self.n_steps() {
            for i in 0..d {
                // J_ij gains θ_j J_i0 + θ_i J_0j + ½ θ_i θ_j h²
                for j in 0..d {
                    out.levy[(k * d + i) * d + j] += theta[j] * self.cross_i[k * d + i]
                        + theta[i] * self.cross0[k * d + j]
                        + theta[i] * theta[j] * half_h2;
                }
            }
            for i in 0..d {
                out.dw[k * d + i] += theta[i] * h;
                out.cross0[k * d + i] += theta[i] * half_h2;
                out.cross_i[k * d + i] += theta[i] * half_h2;
            }
        }
        Ok(out)
    }

    /// Largest shuffle / integration-by-parts residual over all steps.
    pub fn identity_residual(&self) -> T {
        self.steps()
            .map(|s| s.identity_residual())
            .fold(T::zero(), |m, r| m.max(r))
    }

    /// Debug dump, one row per `(step, i, j)`.
    pub fn write_debug_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "step,i,j,dw_i,levy_ij")?;
        for k in 0..self.n_steps() {
            let dw = self.dw(k);
            let levy = self.levy(k);
            for i in 0..self.dim {
                for j in 0..self.dim {
                    writeln!(
                        out,
                        "{k},{i},{j},{:.16e},{:.16e}",
                        crate::scalar::to_f64(dw[i]),
                        crate::scalar::to_f64(levy[(i, j)])
                    )?;
                }
            }
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for the substeps of one grid step, keyed by `(seed, stream, step)`.
pub fn step_rng(seed: u64, stream: u64, step: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = splitmix64(seed) ^ splitmix64(stream.wrapping_add(0x632b_e59b_d9b4_e019));
    state = splitmix64(state ^ step.wrapping_mul(0xd6e8_feb8_6659_fd93));
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// The `M × d` Gaussian substep increments of step `step`, row-major by substep.
pub fn substep_increments<T: Real>(seed: u64, stream: u64, step: usize, h: f64, dim: usize, substeps: usize) -> Vec<T> {
    let mut rng = step_rng(seed, stream, step as u64);
    let scale = (h / substeps as f64).sqrt();
    (0..substeps * dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            lit::<T>(scale * z)
        })
        .collect()
}

/// Builds one step's data from its substep increments (left-point sums).
pub fn step_from_substeps<T: Real>(deltas: &[T], h: T, dim: usize) -> StepInput<T> {
    let m = deltas.len() / dim;
    let dt = h / lit::<T>(m as f64);
    let mut partial = vec![T::zero(); dim];
    let mut area = DMatrix::<T>::zeros(dim, dim);
    let mut cross0 = DVector::<T>::zeros(dim);
    for (s, delta) in deltas.chunks_exact(dim).enumerate() {
        let t_s = dt * lit::<T>(s as f64);
        for i in 0..dim {
            for j in (i + 1)..dim {
                area[(i, j)] += partial[i] * delta[j] - partial[j] * delta[i];
            }
            cross0[i] += t_s * delta[i];
        }
        for i in 0..dim {
            partial[i] += delta[i];
        }
    }
    let dw = DVector::from_vec(partial);
    let half = lit::<T>(0.5);
    let levy = DMatrix::from_fn(dim, dim, |i, j| {
        let delta = if i == j { h } else { T::zero() };
        let sym = half * (dw[i] * dw[j] - delta);
        let anti = match i.cmp(&j) {
            std::cmp::Ordering::Less => half * area[(i, j)],
            std::cmp::Ordering::Greater => -half * area[(j, i)],
            std::cmp::Ordering::Equal => T::zero(),
        };
        sym + anti
    });
    let cross_i = &dw * h - &cross0;
    StepInput {
        dw,
        levy,
        cross0,
        cross_i,
        h,
    }
}

/// Samples increments and iterated integrals of path `stream` on `grid`.
pub fn sample_increments<T: Real>(
    seed: u64,
    stream: u64,
    grid: TimeGrid,
    dim: usize,
    substeps: usize,
) -> Result<WienerIncrements<T>> {
    if substeps == 0 {
        return Err(Error::InvalidParameter("substep count must be ≥ 1".into()));
    }
    if dim == 0 {
        return Err(Error::InvalidParameter("Brownian dimension must be ≥ 1".into()));
    }
    let h = grid.h();
    let h_t: T = lit(h);
    let mut out = WienerIncrements::empty(dim, grid, substeps);
    if substeps == 1 {
        // No area below one substep: skip the accumulation loop.
        for k in 0..grid.n_steps() {
            let deltas = substep_increments::<T>(seed, stream, k, h, dim, 1);
            out.push(&StepInput::from_increment(DVector::from_vec(deltas), h_t));
        }
        return Ok(out);
    }
    for k in 0..grid.n_steps() {
        let deltas = substep_increments::<T>(seed, stream, k, h, dim, substeps);
        out.push(&step_from_substeps(&deltas, h_t, dim));
    }
    Ok(out)
}

/// Composes two adjacent steps with Chen's relations.
pub fn chen_compose<T: Real>(first: &StepInput<T>, second: &StepInput<T>) -> StepInput<T> {
    let levy = &first.levy + &second.levy + &first.dw * second.dw.transpose();
    let cross0 = &first.cross0 + &second.cross0 + &second.dw * first.h;
    let cross_i = &first.cross_i + &second.cross_i + &first.dw * second.h;
    StepInput {
        dw: &first.dw + &second.dw,
        levy,
        cross0,
        cross_i,
        h: first.h + second.h,
    }
}

/// Restricts increments to the grid with step `factor · h`.
pub fn chen_coarsen<T: Real>(fine: &WienerIncrements<T>, factor: usize) -> Result<WienerIncrements<T>> {
    let grid = fine.grid.coarsen(factor)?;
    if factor == 1 {
        return Ok(fine.clone());
    }
    let mut out = WienerIncrements::empty(fine.dim, grid, fine.substeps * factor);
    for c in 0..grid.n_steps() {
        let base = c * factor;
        let mut acc = fine.step(base);
        for k in 1..factor {
            acc = chen_compose(&acc, &fine.step(base + k));
        }
        // the coarse step length is fixed by the grid, not by the float sum
        acc.h = lit(grid.h());
        out.push(&acc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn rejects_zero_substeps_and_zero_dim() {
        assert!(sample_increments::<f64>(1, 0, grid(4), 2, 0).is_err());
        assert!(sample_increments::<f64>(1, 0, grid(4), 0, 4).is_err());
    }

    #[test]
    fn time_grid_rejects_non_divisor_step() {
        assert!(TimeGrid::with_step(1.0, 0.3).is_err());
        assert_eq!(TimeGrid::with_step(1.0, 0.25).unwrap().n_steps(), 4);
        assert!(grid(6).coarsen(4).is_err());
    }

    #[test]
    fn single_substep_carries_no_area() {
        let w = sample_increments::<f64>(3, 1, grid(50), 3, 1).unwrap();
        for k in 0..w.n_steps() {
            let s = w.step(k);
            for i in 0..3 {
                for j in 0..3 {
                    let delta = if i == j { s.h } else { 0.0 };
                    let sym = 0.5 * (s.dw[i] * s.dw[j] - delta);
                    assert!((s.levy[(i, j)] - sym).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn one_dimensional_levy_is_closed_form() {
        for m in [1, 2, 7, 64] {
            let w = sample_increments::<f64>(11, 2, grid(20), 1, m).unwrap();
            for k in 0..w.n_steps() {
                let dw = w.dw(k)[0];
                let expected = 0.5 * (dw * dw - w.h());
                assert!((w.levy(k)[(0, 0)] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn substeps_sum_to_increment() {
        let g = grid(8);
        let w = sample_increments::<f64>(5, 9, g, 2, 16).unwrap();
        for k in 0..8 {
            let deltas = substep_increments::<f64>(5, 9, k, g.h(), 2, 16);
            for i in 0..2 {
                let s: f64 = deltas.chunks_exact(2).map(|c| c[i]).sum();
                assert!((s - w.dw(k)[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn deterministic_for_equal_keys() {
        let a = sample_increments::<f64>(42, 7, grid(32), 2, 8).unwrap();
        let b = sample_increments::<f64>(42, 7, grid(32), 2, 8).unwrap();
        let c = sample_increments::<f64>(42, 8, grid(32), 2, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn coarsen_by_one_is_identity() {
        let w = sample_increments::<f64>(1, 1, grid(16), 2, 4).unwrap();
        assert_eq!(chen_coarsen(&w, 1).unwrap(), w);
    }

    #[test]
    fn coarsen_rejects_non_divisor() {
        let w = sample_increments::<f64>(1, 1, grid(12), 2, 4).unwrap();
        assert!(chen_coarsen(&w, 5).is_err());
        assert!(chen_coarsen(&w, 0).is_err());
    }

    #[test]
    fn reflection_keeps_identities_and_levy() {
        let grid = TimeGrid::new(0.0, 1.0, 8).unwrap();
        let w = sample_increments::<f64>(5, 2, grid, 2, 8).unwrap();
        let r = w.reflected();
        assert!(r.identity_residual() < 1e-14);
        for k in 0..8 {
            assert_eq!(r.levy(k), w.levy(k));
            assert_eq!(r.dw(k)[0], -w.dw(k)[0]);
        }
    }

    #[test]
    fn tilting_matches_recomputation_from_shifted_substeps() {
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let (m, d) = (4096, 2);
        let w = sample_increments::<f64>(8, 1, grid, d, m).unwrap();
        let theta = [0.7, -1.3];
        let t = w.tilted(&theta).unwrap();
        assert!(t.identity_residual() < 1e-14);
        let dt = grid.h() / m as f64;
        for k in 0..4 {
            let mut deltas = substep_increments::<f64>(8, 1, k, grid.h(), d, m);
            for (n, v) in deltas.iter_mut().enumerate() {
                *v += theta[n % d] * dt;
            }
            let direct = step_from_substeps(&deltas, grid.h(), d);
            let s = t.step(k);
            // left-point sums see the drift through the substep grid
            assert!((s.dw - direct.dw).amax() < 1e-14);
            let gap = (&s.levy - &direct.levy).amax();
            assert!(gap < 2e-3 * grid.h(), "{gap}");
        }
    }

    #[test]
    fn two_step_chen_in_one_dimension() {
        let h: f64 = 0.5;
        let (a, b): (f64, f64) = (0.3, -0.7);
        let s1 = StepInput::from_increment(DVector::from_vec(vec![a]), h);
        let s2 = StepInput::from_increment(DVector::from_vec(vec![b]), h);
        let c = chen_compose(&s1, &s2);
        let expected = 0.5 * ((a + b) * (a + b) - 2.0 * h);
        assert!((c.levy[(0, 0)] - expected).abs() < 1e-15);
    }

    #[test]
    fn rotation_preserves_identities() {
        let w = sample_increments::<f64>(2, 3, grid(4), 2, 32).unwrap();
        let (s, c) = (0.8f64.sin(), 0.8f64.cos());
        let q = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        for step in w.steps() {
            let r = step.rotated(&q);
            assert!(r.identity_residual() < 1e-15);
            assert!((r.area(0, 1) - step.area(0, 1)).abs() < 1e-15);
        }
    }

    #[test]
    fn debug_csv_has_one_row_per_entry() {
        let w = sample_increments::<f64>(2, 3, grid(3), 2, 4).unwrap();
        let mut buf = Vec::new();
        w.write_debug_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "step,i,j,dw_i,levy_ij");
        assert_eq!(lines.len(), 1 + 3 * 4);
    }
}
