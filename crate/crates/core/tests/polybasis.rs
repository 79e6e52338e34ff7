use std::f64::consts::TAU;

use polyflow::datamodel::{SignalFamily, SignalSpec};
use polyflow::linalg::Matrix;
use polyflow::polybasis::{build_basis, grid, scaling_study};
use polyflow::rng::GaussianStream;
use proptest::prelude::*;

fn sine(n: usize) -> Vec<f64> {
    (1..=n).map(|t| (TAU * t as f64 / n as f64).sin()).collect()
}

#[test]
fn sine_errors_match_reference() {
    // Legendre-span projections computed with LAPACK.
    let cases = [
        (64, 4, 0.5320863576266289),
        (64, 8, 0.00125592443561788),
        (64, 16, 4.8306519824048144e-11),
        (32, 4, 0.3803561193661235),
        (32, 8, 0.00088761611753588),
    ];
    for (n_points, n, want) in cases {
        let got = build_basis::<f64>(n_points, n).unwrap().approx_error(&sine(n_points)).unwrap();
        assert!((got - want).abs() <= 1e-9 * want + 1e-13, "N={n_points} n={n}: {got} vs {want}");
    }
}

#[test]
fn small_cases() {
    let b = build_basis::<f64>(4, 1).unwrap();
    assert!(b.matrix().as_slice().iter().all(|v| (v - 1.0).abs() < 1e-14));

    let b = build_basis::<f64>(8, 8).unwrap();
    assert!(b.projector().sub(&Matrix::identity(8)).max_abs() <= 1e-8);

    let b = build_basis::<f64>(32, 8).unwrap();
    assert!(b.gram_off_diagonal() <= 1e-8);
    assert!((b.lambda_min() - 32f64.sqrt()).abs() < 1e-10);
    assert!(build_basis::<f64>(4, 5).is_err());
}

#[test]
fn exact_representation() {
    let b = build_basis::<f64>(20, 5).unwrap();
    let c: Vec<f64> = GaussianStream::new(3, 0).vector(5);
    let (coeffs, recon) = b.project(&b.matrix().matvec(&c)).unwrap();
    for (a, e) in coeffs.iter().zip(&c) {
        assert!((a - e).abs() < 1e-8);
    }
    assert!(b.approx_error(&recon).unwrap() < 1e-9);
    assert!(b.approx_error(&[0.7; 20]).unwrap() < 1e-9);
}

#[test]
fn scaling_tables() {
    let delta = TAU / 64.0;
    let s = SignalSpec::unit_sine(64, delta).unwrap();
    let t = scaling_study(&s, delta, 64, &[4, 8, 16, 32]).unwrap();
    assert!(t.strictly_decreasing(), "{:?}", t.rows);

    let ramp = SignalSpec::new(SignalFamily::LinearRamp { slope: 0.8, intercept: 0.1 }, 64, delta).unwrap();
    let t = scaling_study(&ramp, delta, 64, &[2, 5, 9]).unwrap();
    assert!(t.rows.iter().all(|r| r.error <= 1e-9));
    assert!(t.slope.is_none());

    let delta = TAU / 32.0;
    let t = scaling_study(&SignalSpec::unit_sine(32, delta).unwrap(), delta, 32, &[4, 8, 16]).unwrap();
    assert!(t.slope.unwrap() <= -0.4);
}

#[test]
fn grid_is_one_based() {
    let x: Vec<f64> = grid(4);
    assert_eq!(x, vec![0.25, 0.5, 0.75, 1.0]);
}

proptest! {
    #[test]
    fn projector_is_weighted_symmetric_and_idempotent(n_points in 2usize..40, frac in 0.0f64..1.0) {
        let n = 1 + ((n_points - 1) as f64 * frac) as usize;
        let b = build_basis::<f64>(n_points, n).unwrap();
        let p = b.projector();
        prop_assert!(p.matmul(&p).sub(&p).max_abs() <= 1e-8);
        let w = Matrix::diag(b.weights());
        prop_assert!(w.matmul(&p).sub(&p.transpose().matmul(&w)).max_abs() <= 1e-8);
        prop_assert!(b.lambda_min() > 0.0);
    }

    #[test]
    fn error_non_increasing_in_size(n_points in 4usize..40, seed in 0u64..1000) {
        let f: Vec<f64> = GaussianStream::new(seed, 0).vector(n_points);
        let errs: Vec<f64> = (1..=n_points.min(12))
            .map(|n| build_basis::<f64>(n_points, n).unwrap().approx_error(&f).unwrap())
            .collect();
        prop_assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
}
