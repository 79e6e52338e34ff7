use std::path::Path;
use std::process::Command;

use polyflow_harness::{ExperimentConfig, VerificationReport};

fn polyflow(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_polyflow")).args(args).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout).to_string() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap(), text)
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, cfg.to_json()).unwrap();
    p.to_str().unwrap().to_string()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn basis_larger_than_grid_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default_toy();
    cfg.basis.size = 40;
    let path = dir.path().join("bad.json");
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let (code, text) = polyflow(&["verify", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(text.contains("n = 40") && text.contains("N = 32"), "{text}");
}

#[test]
fn unknown_keys_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&ExperimentConfig::default_toy().to_json()).unwrap();
    v["flow"]["stray"] = 1.into();
    let path = dir.path().join("stray.json");
    std::fs::write(&path, v.to_string()).unwrap();
    let (code, text) = polyflow(&["data", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(text.contains("stray"), "{text}");
    assert_eq!(polyflow(&["verify", "--no-such-flag"]).0, 2);
    assert_eq!(polyflow(&["verify", "--only", "nonsense"]).0, 2);
}

#[test]
fn selector_limits_report_entries() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default_toy();
    cfg.experiments = vec![polyflow_harness::CheckId::PinvLemmas];
    let path = write_config(dir.path(), &cfg);
    let out = dir.path().join("out");
    let (code, _) = polyflow(&["verify", "--config", &path, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let report: VerificationReport = serde_json::from_str(&read(&out, "report.json")).unwrap();
    assert_eq!(report.checks.len(), 1);
    assert_eq!(report.checks[0].check_id, "pinv_lemmas");
    assert!(report.overall_pass);
    assert_eq!(report.schema_version, 1);
    assert!(read(&out, "report.csv").starts_with("check_id,pass,lhs,rhs,runtime_ms,error\n"));
}

#[test]
fn default_verify_lists_every_check_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let (code, _) = polyflow(&["verify", "--out", a.to_str().unwrap()]);
    polyflow(&["verify", "--out", b.to_str().unwrap()]);
    let report: VerificationReport = serde_json::from_str(&read(&a, "report.json")).unwrap();
    let ids: Vec<&str> = report.checks.iter().map(|c| c.check_id.as_str()).collect();
    assert_eq!(
        ids,
        ["pinv_lemmas", "basis", "flow_identities", "gd_equivalence", "update_moments", "descent", "convergence", "generalization", "end_to_end", "dit"]
    );
    // The end-to-end proxy fails on the default problem; everything else passes.
    assert_eq!(code, 3);
    for c in &report.checks {
        assert_eq!(c.pass, c.check_id != "end_to_end", "{}", c.check_id);
        assert!(c.runtime_ms.is_none());
    }
    assert_eq!(read(&a, "report.json"), read(&b, "report.json"));
    assert_eq!(read(&a, "report.csv"), read(&b, "report.csv"));
}

#[test]
fn seed_override_changes_the_data() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(polyflow(&["data", "--out", a.to_str().unwrap()]).0, 0);
    assert_eq!(polyflow(&["data", "--seed", "5", "--out", b.to_str().unwrap()]).0, 0);
    assert!(read(&a, "dataset.csv").starts_with("series_id,tau,value,is_input\n"));
    assert_ne!(read(&a, "dataset.csv"), read(&b, "dataset.csv"));
    assert!(read(&b, "dataset.json").contains("\"index_sets\""));
}

#[test]
fn sample_zero_field_returns_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = polyflow(&["sample", "--zero-field", "--series", "2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 0);
    let trace = read(dir.path(), "trace.csv");
    let mut lines = trace.lines();
    assert!(lines.next().unwrap().starts_with("t,x1,"));
    let first: Vec<f64> = lines.next().unwrap().split(',').skip(1).take(8).map(|v| v.parse().unwrap()).collect();
    let fin = read(dir.path(), "final.csv");
    let mut rows = csv::Reader::from_reader(fin.as_bytes());
    let header = rows.headers().unwrap().clone();
    assert_eq!(header.iter().take(3).collect::<Vec<_>>(), ["series_id", "sq_error", "predictor_risk"]);
    let row = rows.records().next().unwrap().unwrap();
    let vals: Vec<f64> = row.iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(vals[0], 2.0);
    let (x1, fy) = (&vals[3..11], &vals[11..19]);
    assert_eq!(x1, &first[..]);
    let err: f64 = x1.iter().zip(fy).map(|(a, b)| (a - b).powi(2)).sum();
    assert!((vals[1] - err).abs() <= 1e-12 * err.max(1.0));
}

#[test]
fn sample_is_reproducible_and_checks_range() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    polyflow(&["sample", "--out", a.to_str().unwrap()]);
    polyflow(&["sample", "--out", b.to_str().unwrap()]);
    assert_eq!(read(&a, "trace.csv"), read(&b, "trace.csv"));
    assert_eq!(read(&a, "final.csv"), read(&b, "final.csv"));
    let (code, text) = polyflow(&["sample", "--series", "99", "--out", a.to_str().unwrap()]);
    assert_eq!(code, 2, "{text}");
}

#[test]
fn sample_divergence_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default_toy();
    cfg.sampler.step_scale = 3.0;
    cfg.sampler.steps = 4096;
    let path = write_config(dir.path(), &cfg);
    let (code, text) = polyflow(&["sample", "--config", &path, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 4, "{text}");
    assert!(text.contains("step"), "{text}");
}

#[test]
fn train_dit_outputs_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::dit_toy();
    let path = write_config(dir.path(), &cfg);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(polyflow(&["train-dit", "--config", &path, "--out", a.to_str().unwrap()]).0, 0);
    polyflow(&["train-dit", "--config", &path, "--out", b.to_str().unwrap()]);
    let loss = read(&a, "loss.csv");
    assert_eq!(loss, read(&b, "loss.csv"));
    assert!(loss.starts_with("step,loss\n"));
    let values: Vec<f64> = loss.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(values.len(), 501);
    assert!(values[500] <= 0.5 * values[0]);
    assert!(read(&a, "fm_loss.csv").starts_with("step,loss,seed,mc_samples\n"));
    assert_eq!(read(&a, "checkpoint.json"), read(&b, "checkpoint.json"));

    cfg.dit.steps = 0;
    let path = write_config(dir.path(), &cfg);
    let c = dir.path().join("c");
    assert_eq!(polyflow(&["train-dit", "--config", &path, "--out", c.to_str().unwrap()]).0, 3);
    assert_eq!(read(&c, "loss.csv").lines().count(), 2);
}

#[test]
fn table_commands() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(polyflow(&["basis", "--out", out]).0, 0);
    assert!(read(dir.path(), "basis.csv").starts_with("tau,P1,P2,P3,P4,P5,P6,P7,P8\n"));
    assert!(read(dir.path(), "scaling.csv").starts_with("n,error\n"));
    assert_eq!(polyflow(&["converge", "--out", out]).0, 0);
    let conv = read(dir.path(), "convergence.csv");
    assert!(conv.starts_with("T,alpha,min_grad_norm_sq,steps_to_eps,diverged\n"));
    assert_eq!(conv.lines().count(), 5);
    assert_eq!(polyflow(&["generalize", "--out", out]).0, 0);
    assert!(read(dir.path(), "risk.csv").starts_with("predictor,v,n,risk,num_samples,seed\n"));
    let fit: serde_json::Value = serde_json::from_str(&read(dir.path(), "fit.json")).unwrap();
    assert!(fit["r_squared"].as_f64().unwrap() >= 0.9);
}

#[test]
fn shipped_configs_match_builtins() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let load = |n: &str| ExperimentConfig::load(&root.join(n)).unwrap();
    assert_eq!(load("default.json"), ExperimentConfig::default_toy());
    assert_eq!(load("dit_toy.json"), ExperimentConfig::dit_toy());
}
