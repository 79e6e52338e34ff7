//! Subcommand bodies. Each returns the process exit code or a classified
//! error.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use polyflow::datamodel::SignalSpec;
use polyflow::dit::{write_history_csv, DitParams, TrainConfig};
use polyflow::flow::{write_loss_csv, LossRow, VectorField};
use polyflow::polybasis::scaling_study;
use polyflow::predictor::{predictor_risk, write_risk_csv};
use polyflow::sampler::run_algorithm1;
use polyflow::Error;

use crate::checks;
use crate::config::{CheckId, ExperimentConfig, FieldKind};
use crate::problem::{stream, Problem};
use crate::report::VerificationReport;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Pass = 0,
    Config = 1,
    Usage = 2,
    CheckFailed = 3,
    Divergence = 4,
}

#[derive(Debug)]
pub struct CommandError {
    pub code: ExitCode,
    pub message: String,
}

impl std::fmt::Display for CommandError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CommandError {
    fn from(e: Error) -> Self {
        let code = if checks::is_divergence(&e) {
            ExitCode::Divergence
        } else {
            ExitCode::Config
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CommandError {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

impl From<csv::Error> for CommandError {
    fn from(e: csv::Error) -> Self {
        Error::from(e).into()
    }
}

pub type CmdResult = Result<ExitCode, CommandError>;

/// Loads and validates a config, applying the seed override.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig, CommandError> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default_toy(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>, CommandError> {
    fs::create_dir_all(out)?;
    Ok(BufWriter::new(File::create(out.join(name))?))
}

fn write_json<T: serde::Serialize>(out: &Path, name: &str, value: &T) -> Result<(), CommandError> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    fs::create_dir_all(out)?;
    fs::write(out.join(name), text)?;
    Ok(())
}

/// Runs the enabled checks; writes `report.json` and `report.csv`. Exit 3 when
/// any check fails.
pub fn verify(cfg: &ExperimentConfig, out: &Path, timings: bool) -> Result<(ExitCode, VerificationReport), CommandError> {
    let problem = Problem::build(cfg)?;
    let entries = checks::run_selected(&problem, &cfg.experiments, timings);
    let report = VerificationReport::new(cfg.seed, entries);
    report.write_json(create(out, "report.json")?)?;
    report.write_csv(create(out, "report.csv")?)?;
    let code = if report.overall_pass {
        ExitCode::Pass
    } else {
        ExitCode::CheckFailed
    };
    Ok((code, report))
}

/// `dataset.csv` and the `dataset.json` sidecar.
pub fn data(cfg: &ExperimentConfig, out: &Path) -> CmdResult {
    let problem = Problem::build(cfg)?;
    problem.dataset.write_csv(create(out, "dataset.csv")?)?;
    problem.dataset.write_sidecar(create(out, "dataset.json")?)?;
    Ok(ExitCode::Pass)
}

/// `basis.csv` for the configured size and `scaling.csv` (`n,error`) for the
/// unit sine over the check sizes.
pub fn basis(cfg: &ExperimentConfig, out: &Path) -> CmdResult {
    let problem = Problem::build(cfg)?;
    problem.basis.write_csv(create(out, "basis.csv")?)?;
    let n = cfg.data.n_points;
    let delta = std::f64::consts::TAU / n as f64;
    let table = scaling_study(&SignalSpec::unit_sine(n, delta)?, delta, n, &cfg.basis.check_sizes)?;
    let mut w = csv::Writer::from_writer(create(out, "scaling.csv")?);
    for r in &table.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(ExitCode::Pass)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SampleOptions {
    pub series: usize,
    /// Replace the field by zero and switch noise off: `x₁ = x₀`.
    pub zero_field: bool,
}

/// Runs the sampler on one dataset series. Writes `trace.csv` and `final.csv`
/// (`series_id,sq_error,predictor_risk,x1_*,fy_*`).
pub fn sample(cfg: &ExperimentConfig, out: &Path, opts: SampleOptions) -> CmdResult {
    let problem = Problem::build(cfg)?;
    let Some(series) = problem.dataset.samples.get(opts.series) else {
        return Err(CommandError {
            code: ExitCode::Usage,
            message: format!(
                "series {} out of range: dataset has {} series",
                opts.series,
                problem.dataset.len()
            ),
        });
    };
    let pred = problem.predictor()?;
    let s = &cfg.sampler;
    let field = match (opts.zero_field, s.field) {
        (true, _) | (false, FieldKind::Zero) => VectorField::Zero,
        (false, FieldKind::DriftOnly) => VectorField::DriftOnly { predictor: pred.as_ref() },
        (false, FieldKind::Oracle) => VectorField::Oracle {
            predictor: pred.as_ref(),
            with_state_term: true,
        },
    };
    let noise_on = s.noise_on && !opts.zero_field;
    let view = problem.view(pred.as_ref(), &series.f_x, s.steps)?;
    let seed = cfg.seed_for(&[stream::SAMPLE, opts.series as u64]);
    let trace = run_algorithm1(&field, &view, &series.f_x, seed, noise_on)?;
    trace.write_csv(create(out, "trace.csv")?)?;

    let x1 = trace.final_state();
    let sq_error: f64 = x1.iter().zip(&series.f_y).map(|(a, b)| (a - b).powi(2)).sum();
    let risk = predictor_risk(pred.as_ref(), &problem.dataset.samples)?;
    let mut w = csv::Writer::from_writer(create(out, "final.csv")?);
    let mut header = vec!["series_id".to_string(), "sq_error".into(), "predictor_risk".into()];
    header.extend((1..=x1.len()).map(|i| format!("x1_{i}")));
    header.extend((1..=series.f_y.len()).map(|i| format!("fy_{i}")));
    w.write_record(&header)?;
    let mut row = vec![opts.series.to_string(), sq_error.to_string(), risk.to_string()];
    row.extend(x1.iter().map(f64::to_string));
    row.extend(series.f_y.iter().map(f64::to_string));
    w.write_record(&row)?;
    w.flush()?;
    Ok(ExitCode::Pass)
}

/// Trains the transformer field. Writes `loss.csv` (`step,loss`),
/// `fm_loss.csv` (`step,loss,seed,mc_samples`) and `checkpoint.json`. Exit 0
/// iff the final loss is below the initial one.
pub fn train_dit(cfg: &ExperimentConfig, out: &Path) -> CmdResult {
    let problem = Problem::build(cfg)?;
    let seed = cfg.seed_for(&[stream::DIT]);
    let init = DitParams::<f64>::random(cfg.dit_shape(), cfg.dit.init_scale, seed)?;
    let ctx = problem.ctx.with_config(cfg.dit_flow_config()?)?;
    let train = TrainConfig {
        steps: cfg.dit.steps,
        lr: cfg.dit.lr,
        mc_batch: cfg.dit.mc_batch,
        seed,
    };
    let outcome = polyflow::dit::train_dit(&init, &ctx, &problem.dataset, &train)?;
    write_history_csv(&outcome.history, create(out, "loss.csv")?)?;
    let rows: Vec<LossRow> = outcome
        .history
        .iter()
        .enumerate()
        .map(|(step, &loss)| LossRow {
            step,
            loss,
            seed,
            mc_samples: cfg.dit.mc_batch,
        })
        .collect();
    write_loss_csv(&rows, create(out, "fm_loss.csv")?)?;
    write_json(out, "checkpoint.json", &outcome.params.to_checkpoint())?;
    let first = outcome.history[0];
    let last = *outcome.history.last().expect("non-empty");
    Ok(if last < first {
        ExitCode::Pass
    } else {
        ExitCode::CheckFailed
    })
}

/// `convergence.csv` for the configured `T` list. Exit 3 when the table is
/// not non-increasing or never reaches `eps`.
pub fn converge(cfg: &ExperimentConfig, out: &Path) -> CmdResult {
    let problem = Problem::build(cfg)?;
    let (outcome, table) = checks::convergence(&problem)?;
    table.write_csv(create(out, "convergence.csv")?)?;
    Ok(if outcome.pass {
        ExitCode::Pass
    } else {
        ExitCode::CheckFailed
    })
}

/// `risk.csv` over the `(n, v)` grid and the two-term fit in `fit.json`.
pub fn generalize(cfg: &ExperimentConfig, out: &Path) -> CmdResult {
    let problem = Problem::build(cfg)?;
    let (outcome, study) = checks::generalization(&problem)?;
    let rows = study.risk_rows(
        cfg.generalization.resamples,
        cfg.seed_for(&[stream::GENERALIZE]),
    );
    write_risk_csv(&rows, create(out, "risk.csv")?)?;
    write_json(out, "fit.json", &study.fit)?;
    Ok(if outcome.pass {
        ExitCode::Pass
    } else {
        ExitCode::CheckFailed
    })
}

/// Parses a comma-separated selector list.
pub fn parse_selectors(list: &str) -> Result<Vec<CheckId>, CommandError> {
    list.split(',')
        .map(|s| {
            let s = s.trim();
            CheckId::ALL
                .into_iter()
                .find(|c| c.as_str() == s)
                .ok_or_else(|| CommandError {
                    code: ExitCode::Usage,
                    message: format!("unknown check `{s}`"),
                })
        })
        .collect()
}
