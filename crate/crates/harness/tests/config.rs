use polyflow_harness::config::{BandwidthSetting, CheckId, PredictorKind};
use polyflow_harness::ExperimentConfig;

fn rejects(edit: impl FnOnce(&mut ExperimentConfig), needle: &str) {
    let mut cfg = ExperimentConfig::default_toy();
    edit(&mut cfg);
    let err = cfg.validate().expect_err("config should be rejected").to_string();
    assert!(err.contains(needle), "`{err}` lacks `{needle}`");
}

#[test]
fn builtins_validate_and_round_trip() {
    for cfg in [ExperimentConfig::default_toy(), ExperimentConfig::dit_toy()] {
        cfg.validate().unwrap();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
}

#[test]
fn range_constraints() {
    rejects(|c| c.basis.size = 33, "N = 32");
    rejects(|c| c.data.n_input = 32, "N_x");
    rejects(|c| c.flow.alpha = 0.0, "alpha");
    rejects(|c| c.flow.sigma_min = 1.5, "sigma_min");
    rejects(|c| c.flow.ode_substeps = 2, "ode_substeps");
    rejects(|c| c.data.noise_variance = -1.0, "v");
    rejects(|c| c.sampler.eps = 0.0, "eps");
    rejects(|c| c.generalization.sizes = vec![30], "N_x");
    rejects(|c| c.experiments.clear(), "experiment");
    rejects(|c| c.experiments.push(CheckId::Basis), "duplicate");
    rejects(|c| c.schema_version = 9, "schema_version");
    rejects(|c| {
        c.predictor.kind = PredictorKind::Kernel;
        c.predictor.bandwidth = BandwidthSetting::Fixed(-1.0);
    }, "bandwidth");
}

#[test]
fn bandwidth_accepts_number_or_auto() {
    let mut v: serde_json::Value = serde_json::from_str(&ExperimentConfig::default_toy().to_json()).unwrap();
    v["predictor"] = serde_json::json!({"kind": "kernel", "bandwidth": 0.25});
    let cfg = ExperimentConfig::from_json(&v.to_string()).unwrap();
    assert_eq!(cfg.predictor.bandwidth, BandwidthSetting::Fixed(0.25));
    v["predictor"]["bandwidth"] = "auto".into();
    ExperimentConfig::from_json(&v.to_string()).unwrap();
    v["predictor"]["bandwidth"] = "wide".into();
    assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
}
