use std::io::Write;

use anyhow::Context;
use frameflow::convergence::{
    coupled_strong_errors, distributional_errors, dyadic_ladder, fit_order, weak_errors, ControlVariate, ErrorSeries,
    StrongConfig, WeakConfig,
};
use frameflow::development::{develop_curve, sphere_bm_path, sphere_bm_sample, EmbeddedSurface, RollingState, Sphere};
use frameflow::linalg::orthogonality_defect;
use frameflow::noise::{sample_increments, TimeGrid};
use frameflow::presets::{preset, Gbm1d, Preset};
use frameflow::schemes::{simulate_path, SchemeKind, SchemeParams, State, Stepper};
use nalgebra::DVector;
use rayon::prelude::*;

use crate::failure::Failure;
use crate::output::{self, num, row};
use crate::{ConvergenceArgs, DevelopArgs, Mode, SimulateArgs, SphereArgs};

const SURFACES: [&str; 1] = ["sphere"];

fn scheme(name: &str) -> Result<SchemeKind, Failure> {
    Ok(name.parse::<SchemeKind>()?)
}

fn problem(name: &str) -> Result<Preset, Failure> {
    Ok(preset(name)?)
}

fn positive_count(value: usize, flag: &str) -> Result<(), Failure> {
    if value == 0 {
        return Err(Failure::usage(format!("{flag} must be at least 1")));
    }
    Ok(())
}

pub fn simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let p = problem(&a.problem)?;
    let kind = scheme(&a.scheme)?;
    positive_count(a.paths, "--paths")?;
    positive_count(a.substeps, "--substeps")?;
    let grid = TimeGrid::with_step(a.t_end, a.h)?;
    let sys = p.system.as_ref();
    let d = sys.dim();
    let stepper = Stepper::new(sys, kind, SchemeParams::default());
    let paths: Vec<Vec<State<f64>>> = (0..a.paths)
        .into_par_iter()
        .map(|i| -> Result<_, Failure> {
            let incr = sample_increments::<f64>(a.seed, i as u64, grid, d, a.substeps)?;
            simulate_path(&stepper, stepper.initial_state(p.x0.clone()), &incr)
                .map_err(|e| Failure::runtime(anyhow::Error::from(e).context(format!("path {i}"))))
        })
        .collect::<Result<_, _>>()?;

    let mut out = output::open(a.out.as_deref())?;
    let mut header: Vec<String> = vec!["path".into(), "step".into(), "t".into()];
    header.extend((1..=d).map(|i| format!("x{i}")));
    if kind.is_frame() {
        header.extend((1..=d).flat_map(|i| (1..=d).map(move |j| format!("e{i}{j}"))));
    }
    writeln!(out, "{}", header.join(","))?;
    for (i, path) in paths.iter().enumerate() {
        for (k, state) in path.iter().enumerate() {
            let mut values: Vec<f64> = state.base().iter().copied().collect();
            if let Some(e) = state.frame() {
                values.extend((0..d).flat_map(|r| (0..d).map(move |c| e[(r, c)])));
            }
            writeln!(out, "{i},{k},{},{}", num(grid.time(k)), row(values))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Functional, exact value and optional control variate for weak runs.
struct WeakProblem {
    f: Functional,
    exact: f64,
    control: Option<Functional>,
}

type Functional = Box<dyn Fn(&DVector<f64>) -> f64 + Sync>;

fn weak_problem(name: &str, p: &Preset, t_end: f64) -> Result<WeakProblem, Failure> {
    match name {
        "flat" => {
            let drift = p.system.drift(&p.x0)[0];
            Ok(WeakProblem {
                f: Box::new(|x| x[0]),
                exact: p.x0[0] + drift * t_end,
                control: None,
            })
        }
        "gbm1d" => {
            let gbm = Gbm1d::<f64>::standard();
            let x0 = p.x0[0];
            Ok(WeakProblem {
                f: Box::new(|x| x[0] * x[0]),
                exact: x0 * x0 * ((2.0 * gbm.mu + 1.0) * t_end).exp(),
                control: Some(Box::new(move |b| gbm.exact(x0, t_end, b[0]).powi(2))),
            })
        }
        _ => Err(Failure::usage(format!(
            "weak mode needs a closed-form reference; available for: flat, gbm1d (got `{name}`)"
        ))),
    }
}

pub fn convergence(a: &ConvergenceArgs) -> Result<(), Failure> {
    let (lo, hi) = a.ladder;
    if hi - lo + 1 < 3 {
        return Err(Failure::usage("need ≥ 3 ladder points"));
    }
    let p = problem(&a.problem)?;
    let kind = scheme(&a.scheme)?;
    positive_count(a.paths, "--paths")?;
    positive_count(a.substeps, "--substeps")?;
    let ladder = dyadic_ladder(lo, hi);
    let sys = p.system.as_ref();
    let series: ErrorSeries = match a.mode {
        Mode::Strong | Mode::W2 => {
            let ref_exp = a.ref_exp.unwrap_or(hi + 3);
            if ref_exp < hi {
                return Err(Failure::usage("--ref-exp must be at least the finest ladder exponent"));
            }
            let cfg = StrongConfig::new(
                a.t_end,
                ladder,
                2f64.powi(-(ref_exp as i32)),
                a.substeps,
                a.paths,
                a.seed,
            );
            if a.mode == Mode::Strong {
                coupled_strong_errors(sys, &[kind], &p.x0, &cfg)?.remove(0)
            } else {
                let first = |x: &DVector<f64>| x[0];
                distributional_errors(sys, &[kind], &p.x0, &first, &cfg)?.remove(0)
            }
        }
        Mode::Weak => {
            let wp = weak_problem(&a.problem, &p, a.t_end)?;
            let mut cfg = WeakConfig::new(a.t_end, ladder, a.substeps, a.paths, a.seed);
            cfg.antithetic = a.antithetic;
            cfg.tilt = a.tilt.map(|t| vec![t; sys.dim()]);
            let control: Option<ControlVariate<'_>> = wp.control.as_deref().map(|c| c as ControlVariate<'_>);
            weak_errors(sys, &[kind], &p.x0, wp.f.as_ref(), wp.exact, control, &cfg)?.remove(0)
        }
    };
    let mut out = output::open(a.out.as_deref())?;
    series.write_csv(&mut out)?;
    out.flush()?;
    if let Ok(fit) = fit_order(&series) {
        eprintln!(
            "{} {}: slope {:.4}, r² {:.4}",
            series.scheme, series.kind, fit.slope, fit.r_squared
        );
    }
    Ok(())
}

pub fn sphere(a: &SphereArgs) -> Result<(), Failure> {
    positive_count(a.paths, "--paths")?;
    TimeGrid::with_step(a.t_end, a.h)?;
    let samples = (0..a.paths)
        .into_par_iter()
        .map(|i| sphere_bm_sample::<f64>(a.seed, i as u64, a.t_end, a.h))
        .collect::<Result<Vec<_>, _>>()?;
    let n = samples.len() as f64;
    let inner: Vec<f64> = samples.iter().map(|s| s.x_end[2]).collect();
    let mean = inner.iter().sum::<f64>() / n;
    let stderr = if samples.len() > 1 {
        (inner.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        f64::NAN
    };
    let norm_dev = samples.iter().map(|s| s.max_norm_deviation).fold(0.0, f64::max);
    let orth_dev = samples
        .iter()
        .map(|s| s.max_orthogonality_deviation)
        .fold(0.0, f64::max);

    let mut out = output::open(a.out.as_deref())?;
    writeln!(
        out,
        "h,mean_inner,stderr,expected,max_norm_deviation,max_orthogonality_deviation"
    )?;
    writeln!(
        out,
        "{}",
        row([a.h, mean, stderr, (-a.t_end).exp(), norm_dev, orth_dev])
    )?;
    out.flush()?;

    if let Some(path) = &a.trajectory {
        let xs = sphere_bm_path::<f64>(a.seed, 0, a.t_end, a.h)?;
        let mut t = output::open(Some(path))?;
        writeln!(t, "step,t,x,y,z")?;
        for (k, x) in xs.iter().enumerate() {
            writeln!(t, "{k},{},{}", num(k as f64 * a.h), row(x.iter().copied()))?;
        }
        t.flush()?;
    }
    Ok(())
}

/// Reads `t,q1,q2` rows; blank lines, `#` comments and a leading header are skipped.
fn read_curve(path: &std::path::Path) -> Result<(Vec<f64>, Vec<DVector<f64>>), Failure> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .with_context(|| format!("cannot read curve file {}", path.display()))
        .map_err(Failure::Usage)?;
    let mut times = Vec::new();
    let mut points = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Failure::usage(format!("curve file: {e}")))?;
        let line = record.position().map_or(idx as u64 + 1, |p| p.line());
        if idx == 0 && record.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if record.len() != 3 {
            return Err(Failure::usage(format!(
                "line {line}: expected 3 columns `t,q1,q2`, found {}",
                record.len()
            )));
        }
        let mut values = [0.0; 3];
        for (v, field) in values.iter_mut().zip(record.iter()) {
            *v = field
                .parse()
                .ok()
                .filter(|x: &f64| x.is_finite())
                .ok_or_else(|| Failure::usage(format!("line {line}: `{field}` is not a finite number")))?;
        }
        if let Some(&prev) = times.last() {
            if values[0] <= prev {
                return Err(Failure::usage(format!("line {line}: times must increase strictly")));
            }
        }
        times.push(values[0]);
        points.push(DVector::from_vec(vec![values[1], values[2]]));
    }
    if times.is_empty() {
        return Err(Failure::usage("curve file has no data rows"));
    }
    Ok((times, points))
}

pub fn develop(a: &DevelopArgs) -> Result<(), Failure> {
    if !SURFACES.contains(&a.surface.as_str()) {
        return Err(Failure::usage(format!(
            "unknown surface `{}`; valid names: {}",
            a.surface,
            SURFACES.join(", ")
        )));
    }
    positive_count(a.substeps, "--substeps")?;
    let (times, q) = read_curve(&a.curve)?;
    let states = develop_curve(&Sphere, &times, &q, RollingState::north_pole(), a.substeps)?;
    let residual = states
        .iter()
        .map(|s| {
            let c: f64 = EmbeddedSurface::<f64>::constraint(&Sphere, &s.p);
            c.abs().max(orthogonality_defect(&s.a))
        })
        .fold(0.0, f64::max);

    let mut out = output::open(a.out.as_deref())?;
    writeln!(out, "t,x,y,z")?;
    for (t, s) in times.iter().zip(&states) {
        writeln!(out, "{},{}", num(*t), row(s.p.iter().copied()))?;
    }
    let last = &states.last().expect("at least one state").a;
    let frame = (0..3).flat_map(|r| (0..3).map(move |c| last[(r, c)]));
    writeln!(out, "# final_frame={}", row(frame))?;
    writeln!(out, "# max_residual={}", num(residual))?;
    out.flush()?;
    Ok(())
}
