use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use frameflow::noise::{sample_increments, TimeGrid};
use tempfile::TempDir;

fn frameflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frameflow"))
        .args(args)
        .env_remove("FRAMEFLOW_THREADS")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

fn floats(line: &str) -> Vec<f64> {
    line.split(',').map(|v| v.parse().unwrap()).collect()
}

#[test]
fn flat_simulation_matches_closed_form() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("flat.csv");
    let o = frameflow(&[
        "simulate",
        "--problem",
        "flat",
        "--scheme",
        "em",
        "--h",
        "0.25",
        "--t",
        "1",
        "--paths",
        "2",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = read(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "path,step,t,x1,x2");
    assert_eq!(lines.len(), 1 + 2 * 5);
    let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
    for p in 0..2usize {
        let last = floats(lines[5 * (p + 1)]);
        assert_eq!((last[0], last[1], last[2]), (p as f64, 4.0, 1.0));
        let b = sample_increments::<f64>(7, p as u64, grid, 2, 64)
            .unwrap()
            .total_increment();
        assert!((last[3] - (0.3 + b[0])).abs() < 1e-12);
        assert!((last[4] - (-0.2 + b[1])).abs() < 1e-12);
    }
}

#[test]
fn frame_schemes_write_frame_columns() {
    let o = frameflow(&[
        "simulate",
        "--problem",
        "noncomm2d",
        "--scheme",
        "frame-milstein",
        "--h",
        "2^-3",
        "--paths",
        "1",
        "--substeps",
        "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap(), "path,step,t,x1,x2,e11,e12,e21,e22");
    assert_eq!(text.lines().count(), 10);
}

#[test]
fn unknown_names_are_usage_errors() {
    let o = frameflow(&["simulate", "--problem", "flat", "--scheme", "rk4", "--h", "0.25"]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    for name in ["em", "milstein", "cmt", "ac", "cg05", "frame-milstein"] {
        assert!(msg.contains(name), "{msg}");
    }
    let o = frameflow(&["simulate", "--problem", "torus", "--scheme", "em", "--h", "0.25"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("noncomm2d"));
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let o = frameflow(&[
            "--threads",
            threads,
            "simulate",
            "--problem",
            "noncomm2d",
            "--scheme",
            "cmt",
            "--h",
            "2^-4",
            "--paths",
            "5",
            "--seed",
            "3",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(out).unwrap()
    };
    let a = run("a.csv", "1");
    assert_eq!(a, run("b.csv", "1"));
    assert_eq!(a, run("c.csv", "2"));
}

#[test]
fn short_ladders_are_rejected() {
    let o = frameflow(&[
        "convergence",
        "--problem",
        "noncomm2d",
        "--scheme",
        "cmt",
        "--ladder",
        "4:5",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("need ≥ 3 ladder points"));
}

#[test]
fn incommensurate_settings_are_rejected_before_simulating() {
    let base = [
        "convergence",
        "--problem",
        "noncomm2d",
        "--scheme",
        "cmt",
        "--ladder",
        "2:4",
    ];
    let o = frameflow(&[&base[..], &["--t", "0.3"]].concat());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = frameflow(&[&base[..], &["--ref-exp", "3"]].concat());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn strong_convergence_csv_has_fit_line() {
    let o = frameflow(&[
        "convergence",
        "--problem",
        "noncomm2d",
        "--scheme",
        "em",
        "--mode",
        "strong",
        "--ladder",
        "2:4",
        "--ref-exp",
        "7",
        "--paths",
        "40",
        "--substeps",
        "8",
        "--seed",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "h,error,stderr");
    assert_eq!(lines.len(), 5);
    assert_eq!(floats(lines[1])[0], 0.25);
    let fit = lines[4];
    assert!(
        fit.starts_with("# slope=") && fit.ends_with("kind=strong-coupled"),
        "{fit}"
    );
    let slope: f64 = fit["# slope=".len()..].split(' ').next().unwrap().parse().unwrap();
    assert!(slope > 0.0 && slope < 1.5, "{slope}");
}

#[test]
fn weak_mode_on_gbm_and_unsupported_problems() {
    let o = frameflow(&[
        "convergence",
        "--problem",
        "gbm1d",
        "--scheme",
        "em",
        "--mode",
        "weak",
        "--ladder",
        "1:3",
        "--paths",
        "2000",
        "--substeps",
        "1",
        "--antithetic",
        "--tilt",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().last().unwrap().ends_with("kind=weak"));
    let o = frameflow(&[
        "convergence",
        "--problem",
        "noncomm2d",
        "--scheme",
        "em",
        "--mode",
        "weak",
        "--ladder",
        "1:3",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn w2_mode_writes_distributional_series() {
    let o = frameflow(&[
        "convergence",
        "--problem",
        "diag-commuting",
        "--scheme",
        "cmt",
        "--mode",
        "w2",
        "--ladder",
        "2:4",
        "--paths",
        "40",
        "--substeps",
        "2",
        "--ref-exp",
        "6",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().last().unwrap().ends_with("kind=wasserstein2"));
}

#[test]
fn sphere_summary_and_trajectory() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("s.csv");
    let traj = dir.path().join("t.csv");
    let args = |o: &Path, t: &Path| {
        frameflow(&[
            "sphere",
            "--h",
            "2^-6",
            "--paths",
            "400",
            "--seed",
            "2",
            "--out",
            o.to_str().unwrap(),
            "--trajectory",
            t.to_str().unwrap(),
        ])
    };
    let o = args(&out, &traj);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = read(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "h,mean_inner,stderr,expected,max_norm_deviation,max_orthogonality_deviation"
    );
    let v = floats(lines[1]);
    assert_eq!(v[0], 2f64.powi(-6));
    assert!((v[3] - (-1f64).exp()).abs() < 1e-15);
    assert!((v[1] - v[3]).abs() < 5.0 * v[2], "{v:?}");
    assert!(v[4] < 1e-12 && v[5] < 1e-13);
    let first = read(&traj);
    assert_eq!(first.lines().count(), 1 + 65);
    let again = dir.path().join("t2.csv");
    assert!(args(&dir.path().join("s2.csv"), &again).status.success());
    assert_eq!(first, read(&again));
}

fn develop(curve: &str, extra: &[&str]) -> (Output, String) {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("curve.csv");
    fs::write(&input, curve).unwrap();
    let out = dir.path().join("dev.csv");
    let o = frameflow(
        &[
            &["develop", input.to_str().unwrap(), "--out", out.to_str().unwrap()][..],
            extra,
        ]
        .concat(),
    );
    let text = fs::read_to_string(&out).unwrap_or_default();
    (o, text)
}

fn final_frame(text: &str) -> Vec<f64> {
    let line = text.lines().find(|l| l.starts_with("# final_frame=")).unwrap();
    floats(&line["# final_frame=".len()..])
}

#[test]
fn straight_segment_develops_to_the_equator() {
    let (o, text) = develop(&format!("t,q1,q2\n0,0,0\n{FRAC_PI_2},{FRAC_PI_2},0\n"), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let last = floats(text.lines().rfind(|l| !l.starts_with('#')).unwrap());
    assert!((last[1] - 1.0).abs() < 1e-6 && last[2].abs() < 1e-6 && last[3].abs() < 1e-6);
    let residual = text.lines().last().unwrap();
    assert!(residual.starts_with("# max_residual="));
}

#[test]
fn constant_curve_stays_at_the_pole() {
    let (o, text) = develop("0,0.3,0.3\n1,0.3,0.3\n2,0.3,0.3\n", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .map(floats)
        .collect();
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert_eq!(&r[1..], &[0.0, 0.0, 1.0]);
    }
    let e = final_frame(&text);
    assert_eq!(e, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
}

#[test]
fn closed_square_has_area_holonomy() {
    let (o, text) = develop("0,0,0\n0.1,0.1,0\n0.2,0.1,0.1\n0.3,0,0.1\n0.4,0,0\n", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let e = final_frame(&text);
    let angle = ((e[0] + e[4] + e[8] - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
    assert!((angle - 0.01).abs() < 5e-4, "{angle}");
}

#[test]
fn malformed_curves_report_line_numbers() {
    let (o, _) = develop("t,q1,q2\n0,0,0\n0.1,abc,0\n", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    let (o, _) = develop("0,0,0\n0.1,0\n", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
    let (o, _) = develop("0,0,0\n0,1,0\n", &[]);
    assert_eq!(o.status.code(), Some(2));
    let (o, _) = develop("0,0,0\n1,1,0\n", &["--surface", "torus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sphere"));
}

#[test]
fn selftest_passes() {
    let o = frameflow(&["selftest"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().count() >= 7);
    assert!(text.lines().all(|l| l.starts_with("[PASS]")), "{text}");
}

#[test]
fn zero_threads_is_a_usage_error() {
    let o = frameflow(&["--threads", "0", "selftest"]);
    assert_eq!(o.status.code(), Some(2));
}
