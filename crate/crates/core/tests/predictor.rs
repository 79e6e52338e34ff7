use std::f64::consts::TAU;

use polyflow::datamodel::{
    make_dataset, make_index_sets, Dataset, IndexSets, SeriesSample, SignalFamily, SignalSpec, SplitMode,
};
use polyflow::polybasis::build_basis;
use polyflow::predictor::{
    generalization_study, predictor_risk, Bandwidth, KernelPredictor, RegularizedPredictor,
};

fn split12() -> IndexSets {
    IndexSets {
        n_points: 12,
        input: vec![0, 1, 2, 4, 5, 7, 8, 10, 11],
        output: vec![3, 6, 9],
    }
}

fn series(sets: &IndexSets, f: Vec<f64>) -> SeriesSample<f64> {
    let sig = SignalSpec::new(SignalFamily::Constant { value: 0.0 }, 12, 1.0).unwrap();
    SeriesSample::from_values(f, sets, sig, 1.0, 0.0, 0).unwrap()
}

#[test]
fn regularized_matches_reference() {
    let sets = split12();
    let f: Vec<f64> = (1..=12).map(|t| (t as f64 / 12.0).exp() * (t as f64 / 2.0).cos()).collect();
    let s = series(&sets, f);
    let p = RegularizedPredictor::new(&build_basis(12, 4).unwrap(), &sets).unwrap();
    let want = [-0.7500451093305333, -1.3541265610930517, 0.22112447490054746];
    for (a, b) in p.f_hat(&s.f_x).unwrap().iter().zip(want) {
        assert!((a - b).abs() < 1e-11, "{a} vs {b}");
    }
    assert!((p.lambda_min() - 2.7860536385802).abs() < 1e-11);
}

#[test]
fn kernel_matches_reference() {
    let sets = split12();
    let rows: Vec<Vec<f64>> = vec![
        (1..=12).map(|t| (t as f64 / 3.0).sin()).collect(),
        (1..=12).map(|t| (t as f64 / 4.0).cos()).collect(),
        (1..=12).map(|t| t as f64 / 12.0).collect(),
    ];
    let d = Dataset {
        index_sets: sets.clone(),
        samples: rows.into_iter().map(|f| series(&sets, f)).collect(),
    };
    let k = KernelPredictor::new(&d, &build_basis(12, 4).unwrap(), Bandwidth::Fixed(0.5)).unwrap();
    let query: Vec<f64> = d.samples[0].f_x.iter().map(|v| v + 0.1).collect();
    for (a, b) in k.weights(&query).unwrap().iter().zip([0.9773780952473421, 0.02079768054295829, 0.00182422420969952]) {
        assert!((a - b).abs() < 1e-13);
    }
    for (a, b) in k.f_star(&query).unwrap().iter().zip([0.9753904767410375, 0.6717884049872863, -0.16367531224725235]) {
        assert!((a - b).abs() < 1e-11);
    }
}

fn toy(noise: f64, per_signal: usize) -> (Dataset<f64>, IndexSets) {
    let n = 32;
    let delta = TAU / n as f64;
    let sets = make_index_sets(n, 24, SplitMode::Imputation, 0).unwrap();
    let sigs = vec![
        SignalSpec::unit_sine(n, delta).unwrap(),
        SignalSpec::new(SignalFamily::LinearRamp { slope: 1.0, intercept: 0.0 }, n, delta).unwrap(),
    ];
    (make_dataset(&sigs, per_signal, delta, noise, n, &sets, 1).unwrap(), sets)
}

#[test]
fn kernel_edge_cases() {
    let (d, sets) = toy(1e-2, 3);
    let k = KernelPredictor::new(&d, &build_basis(32, 8).unwrap(), Bandwidth::Fixed(1e-4)).unwrap();
    let phi = k.phi(&d.samples[2].f_x).unwrap();
    for (a, b) in phi.iter().zip(&d.samples[2].f) {
        assert!((a - b).abs() < 1e-6);
    }

    let (d, _) = toy(0.0, 1);
    let full = KernelPredictor::new(&d, &build_basis(32, 32).unwrap(), Bandwidth::Auto).unwrap();
    let q = &d.samples[0].f_x;
    let phi = full.phi(q).unwrap();
    for (a, &i) in full.f_star(q).unwrap().iter().zip(&sets.output) {
        assert!((a - phi[i]).abs() < 1e-9);
    }
    assert!(KernelPredictor::new(&d, &build_basis(32, 4).unwrap(), Bandwidth::Fixed(0.0)).is_err());
}

#[test]
fn regularized_risk_structure() {
    let (d, sets) = toy(1e-4, 3);
    let basis = build_basis(32, 8).unwrap();
    let p = RegularizedPredictor::new(&basis, &sets).unwrap();
    let risk_at = |v: f64| predictor_risk(&p, &d.resample(v, 64, 2).unwrap()).unwrap();
    let (r0, r1, r2) = (risk_at(0.0), risk_at(1e-4), risk_at(1e-2));
    assert!(r0 <= r1 && r1 <= r2, "{r0} {r1} {r2}");
    let proj: f64 = d
        .signals()
        .iter()
        .map(|s| basis.approx_error(&s.grid(32, TAU / 32.0)).unwrap().powi(2))
        .fold(0.0, f64::max);
    assert!(r0 <= proj + 1e-8);
    assert!(RegularizedPredictor::new(&build_basis::<f64>(32, 25).unwrap(), &sets).is_err());
}

#[test]
fn generalization_grid_is_monotone_in_noise() {
    let (d, _) = toy(1e-4, 3);
    let study = generalization_study(&d, &[2, 4, 8], &[0.0, 1e-4, 1e-2], 64, 2).unwrap();
    for n in [2, 4, 8] {
        let r: Vec<f64> = study.points.iter().filter(|p| p.n == n).map(|p| p.risk).collect();
        assert!(r.windows(2).all(|w| w[0] <= w[1]), "n={n}: {r:?}");
    }
    assert!(study.fit.r_squared >= 0.9);
}
