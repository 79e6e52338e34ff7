use polyflow::datamodel::{make_index_sets, SplitMode};
use polyflow::dit::DitShape;
use polyflow::flow::FlowConfig;
use polyflow::linalg::pinv;
use polyflow::{Basis32, Basis64, DitParams32, DitParams64, FlowContext32, FlowContext64, Matrix32};

#[test]
fn single_precision_tracks_double() {
    let sets = make_index_sets(16, 12, SplitMode::Imputation, 0).unwrap();
    let b32: Basis32 = polyflow::polybasis::build_basis(16, 4).unwrap();
    let b64: Basis64 = polyflow::polybasis::build_basis(16, 4).unwrap();
    let c32 = FlowContext32::from_basis(FlowConfig::new(0.3, 0.5, 4, 32).unwrap(), &b32, &sets).unwrap();
    let c64 = FlowContext64::from_basis(FlowConfig::new(0.3, 0.5, 4, 32).unwrap(), &b64, &sets).unwrap();
    let (fy, z) = ([0.3, -0.2, 0.1, 0.5], [1.0, -1.0, 0.5, 0.2]);
    let m32 = c32.mu_t(&fy.map(|v| v as f32), &z.map(|v| v as f32), 0.8).unwrap();
    let m64 = c64.mu_t(&fy, &z, 0.8).unwrap();
    for (a, b) in m32.iter().zip(&m64) {
        assert!((*a as f64 - b).abs() < 1e-4, "{a} vs {b}");
    }

    let mut g = polyflow::rng::GaussianStream::new(4, 0);
    let a = Matrix32::from_fn(5, 3, |_, _| g.next_value());
    let left = pinv(&a).unwrap().matmul(&a);
    assert!(left.sub(&Matrix32::identity(3)).max_abs() < 1e-5);

    let shape = DitShape::fitted(4, 12, 4, 1, 2, 1, 4);
    let p64 = DitParams64::random(shape, 0.3, 1).unwrap();
    let p32 = DitParams32::random(shape, 0.3, 1).unwrap();
    let fx = [0.1f64; 12];
    let v64 = p64.field(&[0.2; 4], &fx, 0.5).unwrap();
    let v32 = p32.field(&[0.2; 4], &fx.map(|v| v as f32), 0.5).unwrap();
    for (a, b) in v32.iter().zip(&v64) {
        assert!((*a as f64 - b).abs() < 1e-4);
    }
}
