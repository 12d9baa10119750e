//! Fast invariant checks that need no external data.

use std::f64::consts::FRAC_PI_2;

use frameflow::development::{
    develop_curve, so3_exp, sphere_bm_sample, sphere_frame_step, sphere_series_flow, RollingState, Sphere,
};
use frameflow::geometry::{christoffel_from_metric, LocalGeometry};
use frameflow::noise::{chen_coarsen, chen_compose, sample_increments, TimeGrid};
use frameflow::presets::{DiagCommuting, Flat, NonCommuting2d};
use frameflow::schemes::{cmt_step, milstein_step, terminal_state, SchemeKind, SchemeParams, Stepper};
use frameflow::StepInput;
use nalgebra::{DVector, Vector3};

use crate::failure::Failure;

type Check = fn() -> frameflow::Result<(bool, String)>;

fn flat_exactness() -> frameflow::Result<(bool, String)> {
    let sys = Flat::<f64>::standard();
    let x0 = DVector::from_vec(vec![0.5, 0.5]);
    let grid = TimeGrid::new(0.0, 1.0, 4)?;
    let mut worst = 0.0f64;
    for kind in SchemeKind::ALL {
        let stepper = Stepper::new(&sys, kind, SchemeParams::default());
        for p in 0..10 {
            let w = sample_increments::<f64>(1, p, grid, 2, 8)?;
            let end = terminal_state(&stepper, stepper.initial_state(x0.clone()), w.steps())?;
            let exact = &x0 + &sys.drift + w.total_increment();
            worst = worst.max((end.base() - exact).amax());
        }
    }
    Ok((worst < 1e-12, format!("max deviation {worst:.2e}")))
}

fn commuting_reduction() -> frameflow::Result<(bool, String)> {
    let sys = DiagCommuting::<f64>::standard();
    let grid = TimeGrid::new(0.0, 0.1, 1)?;
    let mut worst = 0.0f64;
    for k in 0..100 {
        let x = DVector::from_vec(vec![0.03 * k as f64 - 1.5, 1.0 - 0.02 * k as f64]);
        let inp = sample_increments::<f64>(2, k, grid, 2, 8)?.step(0);
        let sym = StepInput::from_increment(inp.dw.clone(), inp.h);
        worst = worst.max((cmt_step(&sys, &x, &inp)? - milstein_step(&sys, &x, &sym)?).amax());
    }
    Ok((worst < 1e-12, format!("max |cmt − symmetric milstein| {worst:.2e}")))
}

fn christoffel_oracle() -> frameflow::Result<(bool, String)> {
    let sys = NonCommuting2d::<f64>::unit();
    let mut worst = 0.0f64;
    for k in 0..20 {
        let x = DVector::from_vec(vec![0.5 + 0.1 * k as f64, 0.3]);
        let a = LocalGeometry::at(&sys, &x)?.coordinate_connection();
        let b = christoffel_from_metric(&sys, &x, 1e-5)?;
        worst = worst.max(a.gamma.max_abs_diff(&b.gamma));
    }
    Ok((worst < 1e-5, format!("max Christoffel disagreement {worst:.2e}")))
}

fn noise_identities() -> frameflow::Result<(bool, String)> {
    let grid = TimeGrid::new(0.0, 1.0, 1000)?;
    let w = sample_increments::<f64>(3, 0, grid, 3, 8)?;
    let residual = w.identity_residual();
    let coarse = chen_coarsen(&w, 2)?;
    let composed = chen_compose(&w.step(0), &w.step(1));
    let gap = (&coarse.step(0).levy - &composed.levy).amax();
    Ok((
        residual < 1e-13 && gap < 1e-15,
        format!("identity residual {residual:.2e}, coarsening gap {gap:.2e}"),
    ))
}

fn sphere_invariants() -> frameflow::Result<(bool, String)> {
    let mut norm = 0.0f64;
    let mut orth = 0.0f64;
    for p in 0..100 {
        let s = sphere_bm_sample::<f64>(4, p, 1.0, 2f64.powi(-8))?;
        norm = norm.max(s.max_norm_deviation);
        orth = orth.max(s.max_orthogonality_deviation);
    }
    Ok((
        norm < 1e-12 && orth < 1e-13,
        format!("max norm deviation {norm:.2e}, max orthogonality deviation {orth:.2e}"),
    ))
}

fn series_flow_rate() -> frameflow::Result<(bool, String)> {
    let a = so3_exp(&Vector3::new(0.3, -0.8, 1.1));
    let dw = [0.5, 0.8];
    let exact = sphere_frame_step(&a, &dw, 0.0)?;
    let e4 = (sphere_series_flow(&a, &dw, 4)? - exact).amax();
    let e8 = (sphere_series_flow(&a, &dw, 8)? - exact).amax();
    let ratio = e4 / e8;
    Ok((
        (12.0..=20.0).contains(&ratio),
        format!("error ratio per doubling {ratio:.2}"),
    ))
}

fn geodesic() -> frameflow::Result<(bool, String)> {
    let q = vec![DVector::zeros(2), DVector::from_vec(vec![FRAC_PI_2, 0.0])];
    let path = develop_curve(&Sphere, &[0.0, FRAC_PI_2], &q, RollingState::north_pole(), 64)?;
    let err = (&path[1].p - DVector::from_vec(vec![1.0, 0.0, 0.0])).amax();
    Ok((err < 1e-6, format!("quarter great circle lands within {err:.2e}")))
}

const CHECKS: [(&str, Check); 7] = [
    ("flat exactness", flat_exactness),
    ("commuting reduction", commuting_reduction),
    ("christoffel oracle", christoffel_oracle),
    ("noise identities", noise_identities),
    ("sphere invariants", sphere_invariants),
    ("series flow rate", series_flow_rate),
    ("geodesic development", geodesic),
];

pub fn run() -> Result<(), Failure> {
    let mut failed = 0;
    for (name, check) in CHECKS {
        let (pass, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        failed += usize::from(!pass);
    }
    if failed > 0 {
        return Err(Failure::runtime(anyhow::anyhow!("{failed} self-test check(s) failed")));
    }
    Ok(())
}
