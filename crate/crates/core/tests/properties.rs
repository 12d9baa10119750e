use frameflow::convergence::{fit_order, wasserstein2_1d, ErrorEntry, ErrorKind, ErrorSeries};
use frameflow::development::{hat, rotation_angle, so3_exp, sphere_frame_step, vee};
use frameflow::geometry::{christoffel_from_metric, LocalGeometry};
use frameflow::linalg::{orthogonality_defect, polar_factor};
use frameflow::noise::{chen_compose, sample_increments, TimeGrid};
use frameflow::presets::{DiagCommuting, NonCommuting2d};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_steps_satisfy_shuffle_and_parts(
        seed in any::<u64>(),
        stream in 0u64..1000,
        d in 1usize..4,
        m in 1usize..9,
        n in 1usize..6,
    ) {
        let grid = TimeGrid::new(0.0, 0.5, n).unwrap();
        let w = sample_increments::<f64>(seed, stream, grid, d, m).unwrap();
        prop_assert!(w.identity_residual() < 1e-14);
        for step in w.steps() {
            for i in 0..d {
                prop_assert!(step.area(i, i).abs() < 1e-15);
                for j in 0..d {
                    prop_assert!((step.area(i, j) + step.area(j, i)).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn chen_composition_is_associative(seed in any::<u64>(), d in 1usize..4) {
        let grid = TimeGrid::new(0.0, 0.75, 3).unwrap();
        let w = sample_increments::<f64>(seed, 0, grid, d, 4).unwrap();
        let (a, b, c) = (w.step(0), w.step(1), w.step(2));
        let left = chen_compose(&chen_compose(&a, &b), &c);
        let right = chen_compose(&a, &chen_compose(&b, &c));
        prop_assert!((&left.levy - &right.levy).amax() < 1e-13);
        prop_assert!((&left.cross0 - &right.cross0).amax() < 1e-13);
        prop_assert!((&left.dw - &right.dw).amax() < 1e-13);
        prop_assert!(left.identity_residual() < 1e-13);
    }

    #[test]
    fn rotation_keeps_step_identities(seed in any::<u64>(), angle in -3.0f64..3.0) {
        let grid = TimeGrid::new(0.0, 0.25, 1).unwrap();
        let w = sample_increments::<f64>(seed, 1, grid, 2, 8).unwrap();
        let q = DMatrix::from_row_slice(2, 2, &[angle.cos(), -angle.sin(), angle.sin(), angle.cos()]);
        let r = w.step(0).rotated(&q);
        prop_assert!(r.identity_residual() < 1e-14);
        prop_assert!((r.area(0, 1) - w.step(0).area(0, 1)).abs() < 1e-14);
    }

    #[test]
    fn structure_constants_are_antisymmetric(x in 0.3f64..3.0, y in -2.0f64..2.0, s in 0.1f64..2.0) {
        let p = DVector::from_vec(vec![x, y]);
        for k in [
            LocalGeometry::at(&NonCommuting2d::new(s), &p).unwrap().structure,
            LocalGeometry::at(&DiagCommuting::new(s, 2), &p).unwrap().structure,
        ] {
            for i in 0..2 {
                for j in 0..2 {
                    for l in 0..2 {
                        prop_assert!((k.get(i, j, l) + k.get(i, l, j)).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn christoffels_match_closed_form_and_metric(x in 0.4f64..3.0, y in -2.0f64..2.0) {
        let sys = NonCommuting2d::<f64>::unit();
        let p = DVector::from_vec(vec![x, y]);
        let geom = LocalGeometry::at(&sys, &p).unwrap();
        let coord = geom.coordinate_connection();
        let metric = christoffel_from_metric(&sys, &p, 1e-5).unwrap();
        prop_assert!(coord.symmetry_defect() < 1e-12);
        prop_assert!(coord.gamma.max_abs_diff(&metric.gamma) < 1e-6 * (1.0 + x.powi(-3)));
        // g = diag(1, x⁻²)
        prop_assert!((coord.gamma.get(0, 1, 1) - x.powi(-3)).abs() < 1e-8 * (1.0 + x.powi(-3)));
        prop_assert!((coord.gamma.get(1, 0, 1) + 1.0 / x).abs() < 1e-8 / x);
        prop_assert!(coord.gamma.get(0, 0, 0).abs() < 1e-8);
    }

    #[test]
    fn frame_connection_torsion_is_structure(x in 0.4f64..3.0, s in 0.2f64..2.0) {
        let sys = NonCommuting2d::new(s);
        let p = DVector::from_vec(vec![x, 0.0]);
        let geom = LocalGeometry::at(&sys, &p).unwrap();
        let gamma = geom.frame_connection().gamma;
        let k = &geom.structure;
        for l in 0..2 {
            for a in 0..2 {
                for b in 0..2 {
                    let torsion = gamma.get(l, a, b) - gamma.get(l, b, a);
                    prop_assert!((torsion - k.get(l, a, b)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn w2_is_a_metric_on_samples(
        a in prop::collection::vec(-5.0f64..5.0, 1..40),
        shift in -2.0f64..2.0,
        scale in 0.1f64..3.0,
    ) {
        let b: Vec<f64> = a.iter().map(|v| scale * v + shift).collect();
        let c: Vec<f64> = a.iter().rev().map(|v| v * v).collect();
        let ab = wasserstein2_1d(&a, &b).unwrap();
        prop_assert!((ab - wasserstein2_1d(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(wasserstein2_1d(&a, &a).unwrap() == 0.0);
        let ac = wasserstein2_1d(&a, &c).unwrap();
        let bc = wasserstein2_1d(&b, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn power_laws_are_fitted_exactly(order in 0.25f64..4.0, c in 1e-6f64..10.0, n in 3usize..8) {
        let entries = (0..n)
            .map(|k| {
                let h = 0.5f64.powi(k as i32 + 1);
                ErrorEntry { h, error: c * h.powf(order), stderr: 0.0 }
            })
            .filter(|e| e.error >= 1e-12)
            .collect::<Vec<_>>();
        prop_assume!(entries.len() >= 3);
        let fit = fit_order(&ErrorSeries::new(ErrorKind::StrongCoupled, "p", entries).unwrap()).unwrap();
        prop_assert!((fit.slope - order).abs() < 1e-9);
        prop_assert!(fit.r_squared > 1.0 - 1e-12);
    }

    #[test]
    fn so3_exp_is_a_rotation_by_the_norm(wx in -1.5f64..1.5, wy in -1.5f64..1.5, wz in -1.5f64..1.5) {
        let w = Vector3::new(wx, wy, wz);
        let r = so3_exp(&w);
        prop_assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-13);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-13);
        prop_assert!((r * w - w).amax() < 1e-13);
        prop_assert!((rotation_angle(&r) - w.norm()).abs() < 1e-7);
        prop_assert!((vee(&hat(&w)) - w).amax() == 0.0);
    }

    #[test]
    fn sphere_frame_steps_stay_orthonormal(
        dw0 in -0.5f64..0.5,
        dw1 in -0.5f64..0.5,
        wx in -3.0f64..3.0,
        wy in -3.0f64..3.0,
    ) {
        let a = so3_exp(&Vector3::new(wx, wy, 0.3));
        let next = sphere_frame_step(&a, &[dw0, dw1], 0.01).unwrap();
        prop_assert!((next.transpose() * next - Matrix3::identity()).amax() < 1e-12);
        prop_assert!((next.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn polar_factor_is_orthogonal_and_fixes_rotations(
        entries in prop::collection::vec(-1.0f64..1.0, 9),
        angle in -3.0f64..3.0,
    ) {
        let m = DMatrix::from_vec(3, 3, entries) + DMatrix::identity(3, 3) * 2.0;
        let q = polar_factor(&m);
        prop_assert!(orthogonality_defect(&q) < 1e-12);
        let r = DMatrix::from_row_slice(2, 2, &[angle.cos(), -angle.sin(), angle.sin(), angle.cos()]);
        prop_assert!((polar_factor(&r) - &r).amax() < 1e-13);
    }
}
