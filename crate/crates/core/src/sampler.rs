//! The Euler sampler read as gradient descent on a quadratic in the
//! coefficient space `w = G† x`, with the per-step lemma checks and the
//! convergence experiment.

use std::io::Write;

use serde::Serialize;

use crate::check::CheckReport;
use crate::error::{Error, Result};
use crate::flow::{sigma_t, FieldQuery, FlowConfig, FlowContext, VectorField};
use crate::linalg::{min_singular_value, spectral_norm, svd, Matrix};
use crate::predictor::FixedOutput;
use crate::rng::{derive_seed, GaussianStream};
use crate::scalar::{all_finite, axpy, dot, norm2_sq, sub, Scalar};

const X0_STREAM: u64 = 0x7830;
const STEP_STREAM: u64 = 0x7374_6570;

/// Gradient-descent view of the sampler for a fixed `G` and target set.
#[derive(Debug, Clone)]
pub struct GdView<T> {
    ctx: FlowContext<T>,
    targets: Vec<Vec<T>>,
    mean_target: Vec<T>,
    smoothness: T,
}

impl<T: Scalar> GdView<T> {
    /// Requires `G` of full column rank.
    pub fn new(ctx: FlowContext<T>, targets: Vec<Vec<T>>) -> Result<Self> {
        let g = ctx.g();
        if targets.is_empty() {
            return Err(Error::InvalidInput("view needs at least one target".into()));
        }
        for t in &targets {
            if t.len() != g.rows() {
                return Err(Error::shape(g.rows(), t.len()));
            }
        }
        if g.cols() > g.rows() {
            return Err(Error::RankDeficient {
                what: format!("G ({}x{}, n > N_y)", g.rows(), g.cols()),
                lambda_min: 0.0,
            });
        }
        let f = svd(g)?;
        let lambda_min = *f.singular_values.last().expect("non-empty");
        if !(lambda_min > T::rank_cutoff() * f.singular_values[0]) {
            return Err(Error::RankDeficient {
                what: "G".into(),
                lambda_min: lambda_min.as_f64(),
            });
        }
        let smoothness = f.singular_values[0] * f.singular_values[0];
        let mut mean_target = vec![T::zero(); g.rows()];
        for t in &targets {
            axpy(T::one(), t, &mut mean_target);
        }
        let k = T::from_count(targets.len());
        mean_target.iter_mut().for_each(|v| *v /= k);
        Ok(Self {
            ctx,
            targets,
            mean_target,
            smoothness,
        })
    }

    pub fn single(ctx: FlowContext<T>, target: Vec<T>) -> Result<Self> {
        Self::new(ctx, vec![target])
    }

    pub fn ctx(&self) -> &FlowContext<T> {
        &self.ctx
    }

    pub fn cfg(&self) -> &FlowConfig<T> {
        self.ctx.cfg()
    }

    pub fn g(&self) -> &Matrix<T> {
        self.ctx.g()
    }

    pub fn size(&self) -> usize {
        self.g().cols()
    }

    pub fn mean_target(&self) -> &[T] {
        &self.mean_target
    }

    /// Measured smoothness `L̂₁ = ‖GᵀG‖₂`.
    pub fn smoothness(&self) -> T {
        self.smoothness
    }

    /// Same `G` and targets under another flow config.
    pub fn with_config(&self, cfg: FlowConfig<T>) -> Result<Self> {
        let mut out = self.clone();
        out.ctx = self.ctx.with_config(cfg)?;
        Ok(out)
    }

    /// Config with `α T = step / L̂₁` for `T` sampler steps.
    pub fn scaled_config(&self, steps: usize, step: T) -> Result<FlowConfig<T>> {
        let alpha = step / (self.smoothness * T::from_count(steps));
        self.cfg().with_steps(steps)?.with_alpha(alpha)
    }

    /// `w = G† x`.
    pub fn coefficients(&self, x: &[T]) -> Vec<T> {
        self.ctx.g_pinv().matvec(x)
    }

    /// `w* = G† E[f_y]`.
    pub fn optimum(&self) -> Vec<T> {
        self.coefficients(&self.mean_target)
    }

    fn check_w(&self, w: &[T]) -> Result<()> {
        if w.len() != self.size() {
            return Err(Error::shape(self.size(), w.len()));
        }
        Ok(())
    }

    /// `u(w) = ½ E_f ‖G w − f_y‖²`.
    pub fn metric_u(&self, w: &[T]) -> Result<T> {
        self.check_w(w)?;
        let gw = self.g().matvec(w);
        let total: T = self.targets.iter().map(|t| norm2_sq(&sub(&gw, t))).sum();
        Ok(total / (T::lit(2.0) * T::from_count(self.targets.len())))
    }

    /// `∇u(w) = Gᵀ (G w − E[f_y])`.
    pub fn grad_u(&self, w: &[T]) -> Result<Vec<T>> {
        self.check_w(w)?;
        Ok(self.g().tr_matvec(&sub(&self.g().matvec(w), &self.mean_target)))
    }

    /// `Δw = G† (T · F(G w, f_x, (t − 1)/T) + σ_{t/T} z)` for step `t ∈ 1..=T`.
    pub fn delta_w(&self, field: &VectorField<'_, T>, f_x: &[T], w: &[T], t: usize, z: &[T]) -> Result<Vec<T>> {
        self.check_w(w)?;
        let cfg = self.cfg();
        let (time, sigma) = step_times(cfg, t)?;
        let x = self.g().matvec(w);
        let mut v: Vec<T> = field
            .eval(&self.ctx, &FieldQuery::new(&x, f_x, time))?
            .into_iter()
            .map(|e| e * T::from_count(cfg.steps))
            .collect();
        if z.len() != v.len() {
            return Err(Error::shape(v.len(), z.len()));
        }
        axpy(sigma, z, &mut v);
        Ok(self.coefficients(&v))
    }

    /// Drift-only field aimed at the view's mean target.
    pub fn target_predictor(&self) -> FixedOutput<T> {
        FixedOutput {
            output: self.mean_target.clone(),
        }
    }
}

/// `((t − 1)/T, σ_{t/T})` for step `t ∈ 1..=T`.
fn step_times<T: Scalar>(cfg: &FlowConfig<T>, t: usize) -> Result<(T, T)> {
    if t == 0 || t > cfg.steps {
        return Err(Error::InvalidInput(format!("step {t} outside 1..={}", cfg.steps)));
    }
    let big_t = T::from_count(cfg.steps);
    Ok((T::from_count(t - 1) / big_t, sigma_t(cfg, T::from_count(t) / big_t)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct SampleTrace<T> {
    /// `x_{t/T}`, `t = 0..=T`.
    pub states: Vec<Vec<T>>,
    pub w_trace: Vec<Vec<T>>,
    pub u_values: Vec<T>,
    pub grad_norm_sq: Vec<T>,
    /// Noise used at step `t = 1..=T` (zeros when not drawn).
    pub noise: Vec<Vec<T>>,
    pub seed: u64,
    pub noise_on: bool,
    pub config: FlowConfig<T>,
}

impl<T: Scalar> SampleTrace<T> {
    pub fn final_state(&self) -> &[T] {
        self.states.last().expect("trace holds x0")
    }

    /// `min_{t ∈ 1..=T} ‖∇u(w_t)‖²`.
    pub fn min_grad_norm_sq(&self) -> T {
        self.grad_norm_sq[1..].iter().copied().fold(T::infinity(), T::min)
    }

    /// `t,x1..,w1..,u,grad_norm_sq`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let ny = self.states[0].len();
        let n = self.w_trace[0].len();
        let mut header = vec!["t".to_string()];
        header.extend((1..=ny).map(|i| format!("x{i}")));
        header.extend((1..=n).map(|i| format!("w{i}")));
        header.push("u".into());
        header.push("grad_norm_sq".into());
        w.write_record(&header)?;
        for t in 0..self.states.len() {
            let mut rec = vec![t.to_string()];
            rec.extend(self.states[t].iter().map(|v| format_value(*v)));
            rec.extend(self.w_trace[t].iter().map(|v| format_value(*v)));
            rec.push(format_value(self.u_values[t]));
            rec.push(format_value(self.grad_norm_sq[t]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn format_value<T: Scalar>(v: T) -> String {
    format!("{}", v.as_f64())
}

/// Standard normal `x₀` of length `N_y` for `seed`.
pub fn initial_state<T: Scalar>(n_output: usize, seed: u64) -> Vec<T> {
    GaussianStream::new(seed, X0_STREAM).vector(n_output)
}

/// Runs the sampler from `x₀ ~ N(0, I)` drawn from `seed`.
pub fn run_algorithm1<T: Scalar>(
    field: &VectorField<'_, T>,
    view: &GdView<T>,
    f_x: &[T],
    seed: u64,
    noise_on: bool,
) -> Result<SampleTrace<T>> {
    let x0 = initial_state(view.g().rows(), seed);
    run_algorithm1_from(field, view, f_x, x0, seed, noise_on)
}

/// Runs the sampler from a given `x₀`; step noise still comes from `seed`.
pub fn run_algorithm1_from<T: Scalar>(
    field: &VectorField<'_, T>,
    view: &GdView<T>,
    f_x: &[T],
    x0: Vec<T>,
    seed: u64,
    noise_on: bool,
) -> Result<SampleTrace<T>> {
    let cfg = *view.cfg();
    let ny = view.g().rows();
    if x0.len() != ny {
        return Err(Error::shape(ny, x0.len()));
    }
    let big_t = T::from_count(cfg.steps);
    let mut trace = SampleTrace {
        states: Vec::with_capacity(cfg.steps + 1),
        w_trace: Vec::with_capacity(cfg.steps + 1),
        u_values: Vec::with_capacity(cfg.steps + 1),
        grad_norm_sq: Vec::with_capacity(cfg.steps + 1),
        noise: Vec::with_capacity(cfg.steps),
        seed,
        noise_on,
        config: cfg,
    };
    let record = |trace: &mut SampleTrace<T>, x: Vec<T>| -> Result<()> {
        let w = view.coefficients(&x);
        trace.u_values.push(view.metric_u(&w)?);
        trace.grad_norm_sq.push(norm2_sq(&view.grad_u(&w)?));
        trace.w_trace.push(w);
        trace.states.push(x);
        Ok(())
    };
    let mut x = x0;
    record(&mut trace, x.clone())?;
    for t in 1..=cfg.steps {
        let (time, sigma) = step_times(&cfg, t)?;
        let z: Vec<T> = if t > 1 && noise_on {
            GaussianStream::new(derive_seed(seed, &[t as u64]), STEP_STREAM).vector(ny)
        } else {
            vec![T::zero(); ny]
        };
        let v = field.eval(view.ctx(), &FieldQuery::new(&x, f_x, time))?;
        axpy(-big_t, &v, &mut x);
        axpy(-sigma, &z, &mut x);
        if !all_finite(&x) {
            return Err(Error::Divergence {
                at: format!("step {t}"),
                detail: "sampler state became non-finite".into(),
            });
        }
        trace.noise.push(z);
        record(&mut trace, x.clone())?;
    }
    Ok(trace)
}

/// Single-realization descent inequality
/// `u(w') ≤ u(w) + ((L̂₁/2) α² T² − α T) ‖∇u(w)‖² + (L̂₁ n / 2) σ`.
pub fn check_descent_step<T: Scalar>(view: &GdView<T>, w_before: &[T], w_after: &[T], sigma: T) -> Result<CheckReport> {
    let (rhs, grad_sq) = descent_rhs(view, w_before, sigma)?;
    let lhs = view.metric_u(w_after)?.as_f64();
    let tol = 1e-10 * (1.0 + rhs.abs());
    Ok(CheckReport::new(lhs <= rhs + tol, lhs, rhs)
        .with("u_before", view.metric_u(w_before)?.as_f64())
        .with("grad_norm_sq", grad_sq))
}

fn descent_rhs<T: Scalar>(view: &GdView<T>, w: &[T], sigma: T) -> Result<(f64, f64)> {
    let cfg = view.cfg();
    let l1 = view.smoothness().as_f64();
    let at = cfg.alpha.as_f64() * cfg.steps as f64;
    let grad_sq = norm2_sq(&view.grad_u(w)?).as_f64();
    let n = view.size() as f64;
    let rhs = view.metric_u(w)?.as_f64() + (0.5 * l1 * at * at - at) * grad_sq + 0.5 * l1 * n * sigma.as_f64();
    Ok((rhs, grad_sq))
}

fn step_noise<T: Scalar>(seed: u64, k: usize, len: usize) -> Vec<T> {
    GaussianStream::new(derive_seed(seed, &[k as u64]), STEP_STREAM).vector(len)
}

/// Descent inequality in expectation over the step noise at step `t`: passes
/// when the Monte Carlo mean of `u(w − Δw)` minus `4·stderr` is below the
/// right-hand side.
pub fn check_descent_in_expectation<T: Scalar>(
    view: &GdView<T>,
    field: &VectorField<'_, T>,
    f_x: &[T],
    w: &[T],
    t: usize,
    draws: usize,
    seed: u64,
) -> Result<CheckReport> {
    let (_, sigma) = step_times(view.cfg(), t)?;
    let (rhs, grad_sq) = descent_rhs(view, w, sigma)?;
    let ny = view.g().rows();
    let mut values = Vec::with_capacity(draws);
    for k in 0..draws {
        let z = step_noise::<T>(seed, k, ny);
        let dw = view.delta_w(field, f_x, w, t, &z)?;
        values.push(view.metric_u(&sub(w, &dw))?.as_f64());
    }
    let (mean, stderr) = mean_stderr(&values);
    Ok(CheckReport::new(mean - 4.0 * stderr <= rhs, mean, rhs)
        .with("stderr", stderr)
        .with("sigma", sigma.as_f64())
        .with("grad_norm_sq", grad_sq)
        .with("draws", draws as f64))
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `E[Δw] = α T ∇u(w)` coordinate-wise within `4·stderr` over `draws` noise
/// samples at step `t`. `lhs` is the largest standardized deviation.
pub fn check_unbiased_update<T: Scalar>(
    view: &GdView<T>,
    field: &VectorField<'_, T>,
    f_x: &[T],
    w: &[T],
    t: usize,
    draws: usize,
    seed: u64,
) -> Result<CheckReport> {
    let n = view.size();
    let ny = view.g().rows();
    let at = view.cfg().alpha * T::from_count(view.cfg().steps);
    let expect: Vec<f64> = view.grad_u(w)?.iter().map(|g| (at * *g).as_f64()).collect();
    let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(draws); n];
    for k in 0..draws {
        let z = step_noise::<T>(seed, k, ny);
        for (i, v) in view.delta_w(field, f_x, w, t, &z)?.into_iter().enumerate() {
            samples[i].push(v.as_f64());
        }
    }
    let mut worst = 0.0f64;
    for (i, s) in samples.iter().enumerate() {
        let (mean, stderr) = mean_stderr(s);
        let dev = (mean - expect[i]).abs();
        let score = if stderr > 0.0 {
            dev / stderr
        } else if dev <= 1e-12 * (1.0 + expect[i].abs()) {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(score);
    }
    Ok(CheckReport::new(worst <= 4.0, worst, 4.0)
        .with("grad_norm", norm2_sq(&expect).sqrt())
        .with("draws", draws as f64))
}

/// `E‖Δw‖² = α²T²‖∇u‖² + σ²‖G†‖_F²` within `4·stderr`. The printed
/// `α²T²‖∇u‖² + n σ` is reported as `literal_rhs`.
pub fn check_update_second_moment<T: Scalar>(
    view: &GdView<T>,
    field: &VectorField<'_, T>,
    f_x: &[T],
    w: &[T],
    t: usize,
    draws: usize,
    seed: u64,
) -> Result<CheckReport> {
    let ny = view.g().rows();
    let (_, sigma) = step_times(view.cfg(), t)?;
    let at = (view.cfg().alpha * T::from_count(view.cfg().steps)).as_f64();
    let grad_sq = norm2_sq(&view.grad_u(w)?).as_f64();
    let pinv_fro_sq = view.ctx().g_pinv().frobenius_norm().as_f64().powi(2);
    let s = sigma.as_f64();
    let rhs = at * at * grad_sq + s * s * pinv_fro_sq;
    let literal = at * at * grad_sq + view.size() as f64 * s;
    let mut values = Vec::with_capacity(draws);
    for k in 0..draws {
        let z = step_noise::<T>(seed, k, ny);
        values.push(norm2_sq(&view.delta_w(field, f_x, w, t, &z)?).as_f64());
    }
    let (mean, stderr) = mean_stderr(&values);
    Ok(CheckReport::new((mean - rhs).abs() <= 4.0 * stderr, mean, rhs)
        .with("stderr", stderr)
        .with("literal_rhs", literal)
        .with("sigma", s)
        .with("draws", draws as f64))
}

/// `‖∇u(w) − ∇u(w')‖ ≤ L̂₁ ‖w − w'‖` on random pairs, plus exactness: the
/// top right singular direction of `G` attains the ratio `L̂₁`.
pub fn check_smoothness<T: Scalar>(view: &GdView<T>, pairs: usize, seed: u64) -> Result<CheckReport> {
    let n = view.size();
    let l1 = view.smoothness().as_f64();
    let mut g = GaussianStream::new(seed, STEP_STREAM);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let a: Vec<T> = g.vector(n);
        let b: Vec<T> = g.vector(n);
        let num = norm2_sq(&sub(&view.grad_u(&a)?, &view.grad_u(&b)?)).sqrt().as_f64();
        let den = norm2_sq(&sub(&a, &b)).sqrt().as_f64();
        if den > 0.0 {
            worst = worst.max(num / den);
        }
    }
    let f = svd(view.g())?;
    let top = f.v.column(0);
    let mut shifted = view.optimum();
    axpy(T::one(), &top, &mut shifted);
    let attained = norm2_sq(&sub(&view.grad_u(&shifted)?, &view.grad_u(&view.optimum())?))
        .sqrt()
        .as_f64();
    let exact = (attained - l1).abs() <= 1e-10 * l1;
    let measured = spectral_norm(&view.g().tr_matmul(view.g()))?.as_f64();
    Ok(CheckReport::new(worst <= l1 * (1.0 + 1e-12) && exact, worst, l1)
        .with("attained", attained)
        .with("gram_spectral_norm", measured)
        .with("lambda_min_g", min_singular_value(view.g())?.as_f64()))
}

/// Noise-off, drift-only trace against the explicit recursion
/// `w_t = w_{t−1} − αT Gᵀ(G w_{t−1} − ŷ)` and the decomposition
/// `x_t − G w_t = (I − GG†) x₀`.
pub fn check_gd_equivalence<T: Scalar>(view: &GdView<T>, trace: &SampleTrace<T>) -> Result<CheckReport> {
    let cfg = view.cfg();
    let at = cfg.alpha * T::from_count(cfg.steps);
    let g = view.g();
    let x0 = &trace.states[0];
    let residual0 = sub(x0, &view.ctx().range_projector().matvec(x0));
    let mut w = view.coefficients(x0);
    let mut recursion = 0.0f64;
    let mut decomposition = 0.0f64;
    for t in 0..trace.states.len() {
        if t > 0 {
            let grad = view.grad_u(&w)?;
            axpy(-at, &grad, &mut w);
        }
        let dw = sub(&trace.w_trace[t], &w);
        recursion = recursion.max(dw.iter().fold(0.0, |m, v| m.max(v.abs().as_f64())));
        let split = sub(&sub(&trace.states[t], &g.matvec(&trace.w_trace[t])), &residual0);
        decomposition = decomposition.max(split.iter().fold(0.0, |m, v| m.max(v.abs().as_f64())));
    }
    let worst = recursion.max(decomposition);
    Ok(CheckReport::new(worst <= 1e-8, worst, 1e-8)
        .with("recursion_max_abs", recursion)
        .with("decomposition_max_abs", decomposition)
        .with("steps", cfg.steps as f64))
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    #[serde(rename = "T")]
    pub steps: usize,
    pub alpha: f64,
    pub min_grad_norm_sq: f64,
    pub steps_to_eps: Option<usize>,
    pub diverged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub eps: f64,
    /// `min_grad_norm_sq` never increases down the rows.
    pub non_increasing: bool,
    /// Smallest `T` whose run reaches `eps`.
    pub first_t_reaching_eps: Option<usize>,
}

impl ConvergenceTable {
    /// `T,alpha,min_grad_norm_sq,steps_to_eps,diverged`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Drift-only, noise-off runs with `α T = 0.5 / L̂₁` for each `T`; all runs
/// share `x₀` from `seed`.
pub fn convergence_experiment<T: Scalar>(
    view: &GdView<T>,
    f_x: &[T],
    t_list: &[usize],
    eps: T,
    seed: u64,
) -> Result<ConvergenceTable> {
    if t_list.is_empty() {
        return Err(Error::InvalidConfig("empty T list".into()));
    }
    let pred = view.target_predictor();
    let field = VectorField::DriftOnly { predictor: &pred };
    let mut rows = Vec::with_capacity(t_list.len());
    for &steps in t_list {
        let cfg = view.scaled_config(steps, T::lit(0.5))?;
        let v = view.with_config(cfg)?;
        let row = match run_algorithm1(&field, &v, f_x, seed, false) {
            Ok(trace) => ConvergenceRow {
                steps,
                alpha: cfg.alpha.as_f64(),
                min_grad_norm_sq: trace.min_grad_norm_sq().as_f64(),
                steps_to_eps: trace.grad_norm_sq.iter().skip(1).position(|g| *g <= eps).map(|p| p + 1),
                diverged: false,
            },
            Err(Error::Divergence { .. }) => ConvergenceRow {
                steps,
                alpha: cfg.alpha.as_f64(),
                min_grad_norm_sq: f64::NAN,
                steps_to_eps: None,
                diverged: true,
            },
            Err(e) => return Err(e),
        };
        rows.push(row);
    }
    let non_increasing = rows
        .windows(2)
        .all(|p| !p[0].diverged && !p[1].diverged && p[1].min_grad_norm_sq <= p[0].min_grad_norm_sq);
    let first_t_reaching_eps = rows
        .iter()
        .find(|r| !r.diverged && r.min_grad_norm_sq <= eps.as_f64())
        .map(|r| r.steps);
    Ok(ConvergenceTable {
        rows,
        eps: eps.as_f64(),
        non_increasing,
        first_t_reaching_eps,
    })
}

/// `⟨a, b⟩ / (‖a‖‖b‖)`, used by callers comparing update directions.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> T {
    dot(a, b) / (norm2_sq(a).sqrt() * norm2_sq(b).sqrt())
}
