//! One function per verification selector.

use std::collections::BTreeMap;
use std::time::Instant;

use polyflow::check::CheckReport;
use polyflow::datamodel::SignalSpec;
use polyflow::dit::{block_forward, gradient_check, train_dit, DitParams, TrainConfig, TrainOutcome};
use polyflow::flow::{draw_flow_batch, fm_loss, FlowConfig, FlowContext, VectorField};
use polyflow::linalg::{
    check_pinv_norm_bound, check_pinv_perturbation_bound, min_singular_value, spectral_norm, Matrix,
};
use polyflow::polybasis::{build_basis, scaling_study};
use polyflow::predictor::{generalization_study, predictor_risk, GeneralizationStudy, Predictor};
use polyflow::rng::{derive_seed, GaussianStream};
use polyflow::sampler::{
    check_descent_in_expectation, check_descent_step, check_gd_equivalence, check_smoothness,
    check_unbiased_update, check_update_second_moment, convergence_experiment, run_algorithm1,
    ConvergenceTable, GdView,
};
use polyflow::{Error, Result};

use crate::config::{CheckId, FieldKind};
use crate::problem::{stream, Problem};
use crate::report::CheckEntry;

/// Result of one selector before it is stamped into the report.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub pass: bool,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    pub stats: BTreeMap<String, f64>,
}

impl Outcome {
    fn new(pass: bool, lhs: f64, rhs: f64) -> Self {
        Self {
            pass,
            lhs: Some(lhs),
            rhs: Some(rhs),
            stats: BTreeMap::new(),
        }
    }

    fn stat(mut self, key: impl Into<String>, value: f64) -> Self {
        if value.is_finite() {
            self.stats.insert(key.into(), value);
        }
        self
    }

    fn absorb(mut self, prefix: &str, r: &CheckReport) -> Self {
        self.stats.insert(format!("{prefix}.lhs"), r.lhs);
        self.stats.insert(format!("{prefix}.rhs"), r.rhs);
        self.stats.insert(format!("{prefix}.pass"), f64::from(u8::from(r.bound_holds)));
        for (k, v) in &r.details {
            if v.is_finite() {
                self.stats.insert(format!("{prefix}.{k}"), *v);
            }
        }
        self
    }
}

pub fn run_check(problem: &Problem, id: CheckId) -> Result<Outcome> {
    match id {
        CheckId::PinvLemmas => pinv_lemmas(problem.cfg.seed_for(&[stream::PINV]), 200),
        CheckId::Basis => basis(problem),
        CheckId::FlowIdentities => flow_identities(problem),
        CheckId::GdEquivalence => gd_equivalence(problem),
        CheckId::UpdateMoments => update_moments(problem),
        CheckId::Descent => descent(problem),
        CheckId::Convergence => convergence(problem).map(|(o, _)| o),
        CheckId::Generalization => generalization(problem).map(|(o, _)| o),
        CheckId::EndToEnd => end_to_end(problem),
        CheckId::Dit => dit(problem).map(|(o, _)| o),
    }
}

/// Runs the selected checks in order; errors become failed entries.
pub fn run_selected(problem: &Problem, ids: &[CheckId], timings: bool) -> Vec<CheckEntry> {
    ids.iter()
        .map(|&id| {
            let start = Instant::now();
            let res = run_check(problem, id);
            let runtime = timings.then(|| start.elapsed().as_secs_f64() * 1e3);
            match res {
                Ok(o) => CheckEntry {
                    check_id: id.as_str().into(),
                    anchor: id.anchor().into(),
                    pass: o.pass,
                    lhs: o.lhs,
                    rhs: o.rhs,
                    statistics: o.stats,
                    runtime_ms: runtime,
                    error: None,
                },
                Err(e) => CheckEntry {
                    check_id: id.as_str().into(),
                    anchor: id.anchor().into(),
                    pass: false,
                    lhs: None,
                    rhs: None,
                    statistics: BTreeMap::new(),
                    runtime_ms: runtime,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

fn random_matrix(g: &mut GaussianStream, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| g.next_value())
}

fn full_rank(g: &mut GaussianStream, rows: usize, cols: usize) -> Result<Matrix<f64>> {
    loop {
        let a = random_matrix(g, rows, cols);
        if min_singular_value(&a)? >= 1e-3 {
            return Ok(a);
        }
    }
}

/// `B = A + E` with `‖E‖₂ = u · (0.1 / 1.1) · λ_min(A)`, `u ~ U(0, 1)`, which
/// keeps `‖E‖₂ ≤ 0.1 · min(λ_min(A), λ_min(B))`.
fn perturbed(g: &mut GaussianStream, a: &Matrix<f64>) -> Result<Matrix<f64>> {
    let e = random_matrix(g, a.rows(), a.cols());
    let u = g.uniform::<f64>().max(1e-3);
    let target = u * (0.1 / 1.1) * min_singular_value(a)?;
    Ok(a.add(&e.scale(target / spectral_norm(&e)?)))
}

/// `count` random full-rank 8×5 matrices for the norm bound and `count`
/// constrained 8×5 pairs for the perturbation bound. A second perturbation
/// batch over shapes `m × k`, `2 ≤ m ≤ 8`, `k ≤ m` is reported under
/// `mixed_shapes.*`: for strongly rectangular `A` the bound can be exceeded
/// by up to `√2`, so that batch is informational.
pub fn pinv_lemmas(seed: u64, count: usize) -> Result<Outcome> {
    let (mut norm_fail, mut pert_fail) = (0usize, 0usize);
    let (mut norm_ratio, mut pert_ratio) = (0.0f64, 0.0f64);
    for i in 0..count as u64 {
        let mut g = GaussianStream::new(derive_seed(seed, &[0, i]), 0);
        let r = check_pinv_norm_bound(&full_rank(&mut g, 8, 5)?)?;
        norm_ratio = norm_ratio.max(r.lhs / r.rhs);
        norm_fail += usize::from(!r.bound_holds);

        let mut g = GaussianStream::new(derive_seed(seed, &[1, i]), 0);
        let a = full_rank(&mut g, 8, 5)?;
        let r = check_pinv_perturbation_bound(&a, &perturbed(&mut g, &a)?)?;
        pert_ratio = pert_ratio.max(r.lhs / r.rhs);
        pert_fail += usize::from(!r.bound_holds);
    }
    let (mut mixed_fail, mut mixed_ratio) = (0usize, 0.0f64);
    for i in 0..count as u64 {
        let mut g = GaussianStream::new(derive_seed(seed, &[2, i]), 0);
        let rows = 2 + g.index(7);
        let cols = 1 + g.index(rows);
        let a = full_rank(&mut g, rows, cols)?;
        let r = check_pinv_perturbation_bound(&a, &perturbed(&mut g, &a)?)?;
        mixed_ratio = mixed_ratio.max(r.lhs / r.rhs);
        mixed_fail += usize::from(!r.bound_holds);
    }
    let failures = (norm_fail + pert_fail) as f64;
    Ok(Outcome::new(failures == 0.0, failures, 0.0)
        .stat("norm_bound.failures", norm_fail as f64)
        .stat("norm_bound.worst_ratio", norm_ratio)
        .stat("perturbation.failures", pert_fail as f64)
        .stat("perturbation.worst_ratio", pert_ratio)
        .stat("mixed_shapes.exceedances", mixed_fail as f64)
        .stat("mixed_shapes.worst_ratio", mixed_ratio)
        .stat("count", count as f64))
}

/// Orthogonality, positivity and idempotence for every configured size, and
/// strictly decreasing projection error of the unit sine with log-log slope
/// at most −0.4.
pub fn basis(problem: &Problem) -> Result<Outcome> {
    let n_points = problem.cfg.data.n_points;
    let sizes = &problem.cfg.basis.check_sizes;
    let mut pass = true;
    let mut out = Outcome::default();
    let mut worst_gram = 0.0f64;
    let mut worst_idem = 0.0f64;
    for &n in sizes {
        let b = build_basis::<f64>(n_points, n)?;
        let gram = b.gram_off_diagonal();
        let proj = b.projector();
        let idem = proj.matmul(&proj).sub(&proj).max_abs();
        pass &= gram <= 1e-8 && b.lambda_min() > 0.0 && idem <= 1e-8;
        worst_gram = worst_gram.max(gram);
        worst_idem = worst_idem.max(idem);
        out = out
            .stat(format!("n{n}.gram_off_diagonal"), gram)
            .stat(format!("n{n}.lambda_min"), b.lambda_min())
            .stat(format!("n{n}.idempotence"), idem);
    }
    let delta = std::f64::consts::TAU / n_points as f64;
    let table = scaling_study(&SignalSpec::unit_sine(n_points, delta)?, delta, n_points, sizes)?;
    for r in &table.rows {
        out = out.stat(format!("n{}.sine_error", r.n), r.error);
    }
    let slope = table.slope.unwrap_or(f64::NAN);
    pass &= table.strictly_decreasing() && slope <= -0.4;
    out.pass = pass;
    out.lhs = Some(slope);
    out.rhs = Some(-0.4);
    Ok(out
        .stat("worst_gram_off_diagonal", worst_gram)
        .stat("worst_idempotence", worst_idem)
        .stat("strictly_decreasing", f64::from(u8::from(table.strictly_decreasing()))))
}

/// Exact-target loss, `dψ/dt` against finite differences, the scalar mean
/// solution `1 − e^t`, and first-order stationarity of the loss.
pub fn flow_identities(problem: &Problem) -> Result<Outcome> {
    let ctx = &problem.ctx;
    let data = &problem.dataset;
    let mc = problem.cfg.flow.mc_samples;
    let seed = problem.cfg.seed_for(&[stream::FLOW]);

    let exact = fm_loss(&VectorField::ConditionalTarget, ctx, data, mc, seed)?;

    let delta = 1e-4;
    let mut fd_err = 0.0f64;
    for (k, draw) in draw_flow_batch(ctx, data, 8, seed ^ 1)?.iter().enumerate() {
        let t = [0.2, 0.5, 0.8][k % 3];
        let f_y = &data.samples[draw.sample].f_y;
        let psi = ctx.psi_t(f_y, &draw.z, t)?;
        let plus = ctx.psi_t(f_y, &draw.z, t + delta)?;
        let minus = ctx.psi_t(f_y, &draw.z, t - delta)?;
        let target = ctx.conditional_target_field(f_y, &psi, &draw.z)?;
        for i in 0..psi.len() {
            fd_err = fd_err.max(((plus[i] - minus[i]) / (2.0 * delta) - target[i]).abs());
        }
    }

    let scalar = FlowContext::new(
        FlowConfig::new(1.0, 1.0, 1, problem.cfg.flow.ode_substeps)?,
        Matrix::identity(1),
    )?;
    let mut mu_err = 0.0f64;
    for k in 0..=20 {
        let t = k as f64 / 20.0;
        let mu = scalar.mu_t(&[1.0], &[0.0], t)?[0];
        mu_err = mu_err.max((mu - (1.0 - t.exp())).abs());
    }

    let mut dir: Vec<f64> = GaussianStream::new(seed, 2).vector(ctx.n_output());
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|v| *v /= norm);
    let eps = 1e-3;
    let loss = |s: f64| fm_loss(&VectorField::Perturbed { direction: &dir, scale: s }, ctx, data, mc, seed);
    let (l0, lp, lm) = (loss(0.0)?, loss(eps)?, loss(-eps)?);
    let directional = ((lp - lm) / (2.0 * eps)).abs();
    let increases = lp > l0 && lm > l0;

    let pass = exact <= 1e-10 && fd_err <= 1e-4 && mu_err <= 1e-6 && directional <= 1e-4 && increases;
    Ok(Outcome::new(pass, exact, 1e-10)
        .stat("fd_dpsi_dt_max_abs", fd_err)
        .stat("scalar_mean_max_abs", mu_err)
        .stat("directional_derivative", directional)
        .stat("perturbed_loss_increase", lp.min(lm) - l0)
        .stat("mc_samples", mc as f64))
}

fn sampler_field<'a>(kind: FieldKind, predictor: &'a dyn Predictor<f64>) -> VectorField<'a, f64> {
    match kind {
        FieldKind::DriftOnly => VectorField::DriftOnly { predictor },
        FieldKind::Oracle => VectorField::Oracle {
            predictor,
            with_state_term: true,
        },
        FieldKind::Zero => VectorField::Zero,
    }
}

fn first_view(problem: &Problem, predictor: &dyn Predictor<f64>) -> Result<(GdView<f64>, Vec<f64>)> {
    let f_x = problem.dataset.samples[0].f_x.clone();
    let view = problem.view(predictor, &f_x, problem.cfg.flow.steps)?;
    Ok((view, f_x))
}

/// Noise-off drift-only trace against the explicit `w` recursion and the
/// column-space decomposition of `x_t`.
pub fn gd_equivalence(problem: &Problem) -> Result<Outcome> {
    let pred = problem.predictor()?;
    let (view, f_x) = first_view(problem, pred.as_ref())?;
    let field = VectorField::DriftOnly { predictor: pred.as_ref() };
    let trace = run_algorithm1(&field, &view, &f_x, problem.cfg.seed_for(&[stream::X0]), false)?;
    let r = check_gd_equivalence(&view, &trace)?;
    Ok(Outcome::new(r.bound_holds, r.lhs, r.rhs)
        .absorb("gd", &r)
        .stat("alpha", view.cfg().alpha))
}

/// Unbiased update and second moment over `mc_draws` noise samples at step
/// 2, and exactness of the measured smoothness constant.
pub fn update_moments(problem: &Problem) -> Result<Outcome> {
    let pred = problem.predictor()?;
    let (view, f_x) = first_view(problem, pred.as_ref())?;
    let field = VectorField::DriftOnly { predictor: pred.as_ref() };
    let x0: Vec<f64> = polyflow::sampler::initial_state(view.g().rows(), problem.cfg.seed_for(&[stream::X0]));
    let w = view.coefficients(&x0);
    let draws = problem.cfg.sampler.mc_draws;
    let seed = problem.cfg.seed_for(&[stream::MONTE_CARLO]);
    let unbiased = check_unbiased_update(&view, &field, &f_x, &w, 2, draws, seed)?;
    let moment = check_update_second_moment(&view, &field, &f_x, &w, 2, draws, seed)?;
    let smooth = check_smoothness(&view, 200, seed)?;
    let pass = unbiased.bound_holds && moment.bound_holds && smooth.bound_holds;
    Ok(Outcome::new(pass, unbiased.lhs, unbiased.rhs)
        .absorb("unbiased", &unbiased)
        .absorb("second_moment", &moment)
        .absorb("smoothness", &smooth))
}

/// Per-step descent inequality on a noise-off run with `α T = step_scale /
/// L̂₁`. The in-expectation form at step 2 is reported under `expectation.*`.
pub fn descent(problem: &Problem) -> Result<Outcome> {
    let pred = problem.predictor()?;
    let (view, f_x) = first_view(problem, pred.as_ref())?;
    let field = VectorField::DriftOnly { predictor: pred.as_ref() };
    let trace = run_algorithm1(&field, &view, &f_x, problem.cfg.seed_for(&[stream::X0]), false)?;
    let mut failures = 0usize;
    let mut worst_slack = f64::INFINITY;
    for t in 1..trace.w_trace.len() {
        let r = check_descent_step(&view, &trace.w_trace[t - 1], &trace.w_trace[t], 0.0)?;
        failures += usize::from(!r.bound_holds);
        worst_slack = worst_slack.min(r.rhs - r.lhs);
    }
    let w = view.coefficients(&trace.states[0]);
    let draws = (problem.cfg.sampler.mc_draws / 5).max(2);
    let expect = check_descent_in_expectation(
        &view,
        &field,
        &f_x,
        &w,
        2,
        draws,
        problem.cfg.seed_for(&[stream::MONTE_CARLO, 1]),
    )?;
    let pass = failures == 0;
    Ok(Outcome::new(pass, failures as f64, 0.0)
        .stat("steps", (trace.w_trace.len() - 1) as f64)
        .stat("worst_slack", worst_slack)
        .stat("u_first", trace.u_values[0])
        .stat("u_last", *trace.u_values.last().expect("non-empty"))
        .absorb("expectation", &expect))
}

/// `min_t ‖∇u‖²` over the configured `T` list: non-increasing and at most
/// `eps` by the largest `T`.
pub fn convergence(problem: &Problem) -> Result<(Outcome, ConvergenceTable)> {
    let pred = problem.predictor()?;
    let (view, f_x) = first_view(problem, pred.as_ref())?;
    let s = &problem.cfg.sampler;
    let table = convergence_experiment(&view, &f_x, &s.convergence_steps, s.eps, problem.cfg.seed_for(&[stream::X0]))?;
    let last = table.rows.last().expect("non-empty");
    let pass = table.non_increasing && !last.diverged && last.min_grad_norm_sq <= s.eps;
    let mut out = Outcome::new(pass, last.min_grad_norm_sq, s.eps)
        .stat("non_increasing", f64::from(u8::from(table.non_increasing)))
        .stat("smoothness", view.smoothness());
    for r in &table.rows {
        out = out.stat(format!("T{}.min_grad_norm_sq", r.steps), r.min_grad_norm_sq);
    }
    Ok((out, table))
}

/// Risk of `F̂` over the `(n, v)` grid: non-decreasing in `v`, bounded by the
/// projection term at `v = 0`, and explained by the two-term fit.
pub fn generalization(problem: &Problem) -> Result<(Outcome, GeneralizationStudy)> {
    let g = &problem.cfg.generalization;
    let mut variances = g.variances.clone();
    variances.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let study = generalization_study(
        &problem.dataset,
        &g.sizes,
        &variances,
        g.resamples,
        problem.cfg.seed_for(&[stream::GENERALIZE]),
    )?;
    let mut monotone = true;
    let mut zero_bound = true;
    let mut out = Outcome::default();
    for &n in &g.sizes {
        let pts: Vec<_> = study.points.iter().filter(|p| p.n == n).collect();
        monotone &= pts.windows(2).all(|w| w[1].risk >= w[0].risk);
        for p in &pts {
            if p.v == 0.0 {
                zero_bound &= p.risk <= p.projection_sq + 1e-8;
            }
            out = out.stat(format!("n{}.v{:e}.risk", n, p.v), p.risk);
        }
        if let Some(p) = pts.first() {
            out = out.stat(format!("n{n}.projection_sq"), p.projection_sq);
        }
    }
    let fit = &study.fit;
    out.pass = monotone && zero_bound && fit.r_squared >= 0.9;
    out.lhs = Some(fit.r_squared);
    out.rhs = Some(0.9);
    let out = out
        .stat("monotone_in_v", f64::from(u8::from(monotone)))
        .stat("zero_noise_bound", f64::from(u8::from(zero_bound)))
        .stat("fit.c_noise", fit.c_noise)
        .stat("fit.c_projection", fit.c_projection);
    Ok((out, study))
}

/// Mean `‖x₁ − f̃_y‖²` over fresh resamples against `risk(F̂) + 1e-2`.
pub fn end_to_end(problem: &Problem) -> Result<Outcome> {
    let s = &problem.cfg.sampler;
    let fresh = problem.dataset.resample(
        problem.cfg.data.noise_variance,
        s.trajectories,
        problem.cfg.seed_for(&[stream::END_TO_END]),
    )?;
    let pred = problem.predictor()?;
    let field = sampler_field(s.field, pred.as_ref());
    let mut total = 0.0;
    let mut to_prediction = 0.0;
    for (k, sample) in fresh.iter().enumerate() {
        let view = problem.view(pred.as_ref(), &sample.f_x, s.steps)?;
        let seed = problem.cfg.seed_for(&[stream::END_TO_END, k as u64]);
        let trace = run_algorithm1(&field, &view, &sample.f_x, seed, s.noise_on)?;
        let x1 = trace.final_state();
        total += x1.iter().zip(&sample.f_y).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        to_prediction += x1.iter().zip(view.mean_target()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    let k = fresh.len() as f64;
    let mean = total / k;
    let risk = predictor_risk(&problem.regularized, &fresh)?;
    Ok(Outcome::new(mean <= risk + 1e-2, mean, risk + 1e-2)
        .stat("predictor_risk", risk)
        .stat("mean_sq_to_prediction", to_prediction / k)
        .stat("trajectories", k)
        .stat("steps", s.steps as f64))
}

/// Products of the transformer check.
pub struct DitRun {
    pub init: DitParams<f64>,
    pub outcome: TrainOutcome<f64>,
}

/// Block equivariance, per-tensor gradient agreement and halving of the
/// flow-matching loss by training.
pub fn dit(problem: &Problem) -> Result<(Outcome, DitRun)> {
    let cfg = &problem.cfg;
    let shape = cfg.dit_shape();
    let seed = cfg.seed_for(&[stream::DIT]);
    let init = DitParams::<f64>::random(shape, cfg.dit.init_scale, seed)?;

    let probe = DitParams::<f64>::random(shape, 0.5, seed ^ 1)?;
    let mut g = GaussianStream::new(seed, 1);
    let x = Matrix::from_fn(shape.seq_len, shape.width, |_, _| g.next_value());
    let mut perm: Vec<usize> = (0..shape.seq_len).collect();
    for i in (1..perm.len()).rev() {
        perm.swap(i, g.index(i + 1));
    }
    let mut equivariance = 0.0f64;
    for b in &probe.blocks {
        let lhs = block_forward(b, &x.select_rows(&perm))?;
        let rhs = block_forward(b, &x)?.select_rows(&perm);
        equivariance = equivariance.max(lhs.sub(&rhs).max_abs());
    }

    let ctx = problem.ctx.with_config(cfg.dit_flow_config()?)?;
    let draws = draw_flow_batch(&ctx, &problem.dataset, 8, seed ^ 2)?;
    let grads = gradient_check(&init, &problem.dataset, &draws, 1e-5)?;
    let worst_grad = grads.iter().map(|(_, r)| *r).fold(0.0, f64::max);

    let train = TrainConfig {
        steps: cfg.dit.steps,
        lr: cfg.dit.lr,
        mc_batch: cfg.dit.mc_batch,
        seed,
    };
    let outcome = train_dit(&init, &ctx, &problem.dataset, &train)?;
    let first = outcome.history[0];
    let last = *outcome.history.last().expect("non-empty");
    let pass = equivariance <= 1e-10 && worst_grad <= 1e-4 && last <= 0.5 * first;
    let mut out = Outcome::new(pass, last, 0.5 * first)
        .stat("equivariance_max_abs", equivariance)
        .stat("gradient_worst_relative", worst_grad)
        .stat("initial_loss", first)
        .stat("final_loss", last)
        .stat("rejected_steps", outcome.rejected_steps as f64)
        .stat("num_params", init.num_params() as f64);
    for (name, rel) in &grads {
        out = out.stat(format!("grad.{name}"), *rel);
    }
    Ok((out, DitRun { init, outcome }))
}

/// Maps divergence to its own error class for exit codes.
pub fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::Divergence { .. })
}
