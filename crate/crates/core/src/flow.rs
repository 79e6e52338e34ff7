//! Conditional flow `ψ_t = σ_t z + μ_t` toward the output window, its exact
//! time derivative, the closed-form oracle fields and the Monte Carlo
//! flow-matching loss.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datamodel::{Dataset, IndexSets};
use crate::dit::DitParams;
use crate::error::{Error, Result};
use crate::linalg::{pinv, Matrix};
use crate::polybasis::PolynomialBasis;
use crate::predictor::{g_matrix, Predictor};
use crate::rng::{derive_seed, GaussianStream};
use crate::scalar::{all_finite, axpy, norm2_sq, sub, Scalar};

const FM_STREAM: u64 = 0x666d_6c6f_7373;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FlowConfig<T> {
    pub alpha: T,
    pub sigma_min: T,
    /// Sampler step count `T`.
    pub steps: usize,
    /// RK4 steps per unit time for the mean ODE.
    pub ode_substeps: usize,
}

impl<T: Scalar> FlowConfig<T> {
    pub fn new(alpha: T, sigma_min: T, steps: usize, ode_substeps: usize) -> Result<Self> {
        let cfg = Self {
            alpha,
            sigma_min,
            steps,
            ode_substeps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `α ∈ (0, 1]`, `σ_min ∈ (0, 1]`, `T ≥ 1`, `ode_substeps ≥ 4`.
    pub fn validate(&self) -> Result<()> {
        let unit = |v: T| v.is_finite() && v > T::zero() && v <= T::one();
        if !unit(self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha = {} must lie in (0, 1]", self.alpha)));
        }
        if !unit(self.sigma_min) {
            return Err(Error::InvalidConfig(format!(
                "sigma_min = {} must lie in (0, 1]",
                self.sigma_min
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("T must be >= 1".into()));
        }
        if self.ode_substeps < 4 {
            return Err(Error::InvalidConfig(format!(
                "ode_substeps = {} must be >= 4",
                self.ode_substeps
            )));
        }
        Ok(())
    }

    pub fn with_alpha(mut self, alpha: T) -> Result<Self> {
        self.alpha = alpha;
        self.validate()?;
        Ok(self)
    }

    pub fn with_steps(mut self, steps: usize) -> Result<Self> {
        self.steps = steps;
        self.validate()?;
        Ok(self)
    }
}

fn check_time<T: Scalar>(t: T) -> Result<()> {
    if t >= T::zero() && t <= T::one() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("time t = {t} outside [0, 1]")))
    }
}

// (1 − t) + σ_min t == 1 − (1 − σ_min) t, exact at both ends
fn schedule<T: Scalar>(sigma_min: T, t: T) -> T {
    (T::one() - t) + sigma_min * t
}

/// `σ_t = 1 − (1 − σ_min) t`.
pub fn sigma_t<T: Scalar>(cfg: &FlowConfig<T>, t: T) -> Result<T> {
    check_time(t)?;
    Ok(schedule(cfg.sigma_min, t))
}

/// Flow operators for a fixed `G = M(I_y) P`.
#[derive(Debug, Clone)]
pub struct FlowContext<T> {
    cfg: FlowConfig<T>,
    g: Matrix<T>,
    g_pinv: Matrix<T>,
    /// `GG†`.
    range_proj: Matrix<T>,
    /// `GGᵀ`.
    g_gt: Matrix<T>,
    /// `α GGᵀ GG†`.
    drift: Matrix<T>,
}

impl<T: Scalar> FlowContext<T> {
    pub fn new(cfg: FlowConfig<T>, g: Matrix<T>) -> Result<Self> {
        cfg.validate()?;
        let g_pinv = pinv(&g)?;
        let range_proj = g.matmul(&g_pinv);
        let g_gt = g.matmul_tr(&g);
        let drift = g_gt.matmul(&range_proj).scale(cfg.alpha);
        Ok(Self {
            cfg,
            g,
            g_pinv,
            range_proj,
            g_gt,
            drift,
        })
    }

    pub fn from_basis(cfg: FlowConfig<T>, basis: &PolynomialBasis<T>, sets: &IndexSets) -> Result<Self> {
        Self::new(cfg, g_matrix(basis, sets)?)
    }

    pub fn cfg(&self) -> &FlowConfig<T> {
        &self.cfg
    }

    pub fn g(&self) -> &Matrix<T> {
        &self.g
    }

    pub fn g_pinv(&self) -> &Matrix<T> {
        &self.g_pinv
    }

    pub fn range_projector(&self) -> &Matrix<T> {
        &self.range_proj
    }

    pub fn n_output(&self) -> usize {
        self.g.rows()
    }

    /// Same `G`, different flow hyperparameters.
    pub fn with_config(&self, cfg: FlowConfig<T>) -> Result<Self> {
        cfg.validate()?;
        let mut out = self.clone();
        out.drift = self.g_gt.matmul(&self.range_proj).scale(cfg.alpha);
        out.cfg = cfg;
        Ok(out)
    }

    fn check_len(&self, v: &[T]) -> Result<()> {
        if v.len() != self.n_output() {
            return Err(Error::shape(self.n_output(), v.len()));
        }
        Ok(())
    }

    /// `α GGᵀ (GG† x − target)`.
    pub fn mean_drift(&self, x: &[T], target: &[T]) -> Result<Vec<T>> {
        self.check_len(x)?;
        self.check_len(target)?;
        let r = sub(&self.range_proj.matvec(x), target);
        Ok(self.g_gt.matvec(&r).into_iter().map(|v| v * self.cfg.alpha).collect())
    }

    /// Integrates `μ' = α GGᵀ (GG† (σ_s z + μ) − f_y)` from `μ₀ = 0` with RK4
    /// on the grid `k / ode_substeps`, finishing with one partial step.
    pub fn mu_t(&self, f_y: &[T], z: &[T], t: T) -> Result<Vec<T>> {
        check_time(t)?;
        self.check_len(f_y)?;
        self.check_len(z)?;
        let offset: Vec<T> = self
            .g_gt
            .matvec(f_y)
            .into_iter()
            .map(|v| v * self.cfg.alpha)
            .collect();
        let sigma_min = self.cfg.sigma_min;
        let rhs = |s: T, mu: &[T]| -> Vec<T> {
            let sigma = schedule(sigma_min, s);
            let mut psi = mu.to_vec();
            axpy(sigma, z, &mut psi);
            let mut d = self.drift.matvec(&psi);
            axpy(-T::one(), &offset, &mut d);
            d
        };
        let substeps = self.cfg.ode_substeps;
        let h = T::one() / T::from_count(substeps);
        let full = ((t * T::from_count(substeps)).floor().to_usize().unwrap_or(0)).min(substeps);
        let mut mu = vec![T::zero(); self.n_output()];
        let mut s = T::zero();
        for k in 0..full {
            s = T::from_count(k) * h;
            mu = rk4_step(&rhs, s, &mu, h);
            s = T::from_count(k + 1) * h;
            if !all_finite(&mu) {
                return Err(Error::Divergence {
                    at: format!("t = {s}"),
                    detail: "mean ODE state became non-finite".into(),
                });
            }
        }
        let rest = t - s;
        if rest > T::zero() {
            mu = rk4_step(&rhs, s, &mu, rest);
            if !all_finite(&mu) {
                return Err(Error::Divergence {
                    at: format!("t = {t}"),
                    detail: "mean ODE state became non-finite".into(),
                });
            }
        }
        Ok(mu)
    }

    /// `ψ_t = σ_t z + μ_t`; exactly `z` at `t = 0`.
    pub fn psi_t(&self, f_y: &[T], z: &[T], t: T) -> Result<Vec<T>> {
        let sigma = sigma_t(&self.cfg, t)?;
        let mut psi = self.mu_t(f_y, z, t)?;
        axpy(sigma, z, &mut psi);
        Ok(psi)
    }

    /// `dψ/dt` at state `x` with conditioning noise `z`:
    /// `α GGᵀ (GG† x − f_y) + (σ_min − 1) z`.
    pub fn conditional_target_field(&self, f_y: &[T], x: &[T], z: &[T]) -> Result<Vec<T>> {
        self.check_len(z)?;
        let mut out = self.mean_drift(x, f_y)?;
        axpy(self.cfg.sigma_min - T::one(), z, &mut out);
        Ok(out)
    }

    /// Closed-form field with the predictor standing in for `f_y`. With the
    /// state term the state also takes the noise slot.
    pub fn oracle_field(
        &self,
        predictor: &(impl Predictor<T> + ?Sized),
        x: &[T],
        f_x: &[T],
        with_state_term: bool,
    ) -> Result<Vec<T>> {
        let y = predictor.predict(f_x)?;
        let mut out = self.mean_drift(x, &y)?;
        if with_state_term {
            axpy(self.cfg.sigma_min - T::one(), x, &mut out);
        }
        Ok(out)
    }
}

fn rk4_step<T: Scalar>(rhs: &impl Fn(T, &[T]) -> Vec<T>, s: T, y: &[T], h: T) -> Vec<T> {
    let half = h / T::lit(2.0);
    let k1 = rhs(s, y);
    let mut tmp = y.to_vec();
    axpy(half, &k1, &mut tmp);
    let k2 = rhs(s + half, &tmp);
    let mut tmp = y.to_vec();
    axpy(half, &k2, &mut tmp);
    let k3 = rhs(s + half, &tmp);
    let mut tmp = y.to_vec();
    axpy(h, &k3, &mut tmp);
    let k4 = rhs(s + h, &tmp);
    let sixth = h / T::lit(6.0);
    let two = T::lit(2.0);
    y.iter()
        .enumerate()
        .map(|(i, &v)| v + sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]))
        .collect()
}

/// Arguments of a vector-field evaluation. `f_y` and `z` are only consulted
/// by the fields that need the true conditioning pair.
#[derive(Debug, Clone, Copy)]
pub struct FieldQuery<'q, T> {
    pub x: &'q [T],
    pub f_x: &'q [T],
    pub t: T,
    pub f_y: Option<&'q [T]>,
    pub z: Option<&'q [T]>,
}

impl<'q, T: Scalar> FieldQuery<'q, T> {
    pub fn new(x: &'q [T], f_x: &'q [T], t: T) -> Self {
        Self {
            x,
            f_x,
            t,
            f_y: None,
            z: None,
        }
    }
}

/// A map `(x, f_x, t) ↦ R^{N_y}`.
#[derive(Clone, Copy)]
pub enum VectorField<'a, T: Scalar> {
    /// `dψ/dt` with the query's own `(f_y, z)`.
    ConditionalTarget,
    /// Conditional target plus `scale · direction`.
    Perturbed { direction: &'a [T], scale: T },
    Oracle {
        predictor: &'a dyn Predictor<T>,
        with_state_term: bool,
    },
    DriftOnly { predictor: &'a dyn Predictor<T> },
    Learned { params: &'a DitParams<T> },
    Zero,
}

impl<T: Scalar> VectorField<'_, T> {
    pub fn label(&self) -> &'static str {
        match self {
            VectorField::ConditionalTarget => "conditional_target",
            VectorField::Perturbed { .. } => "perturbed_target",
            VectorField::Oracle { .. } => "oracle",
            VectorField::DriftOnly { .. } => "drift_only",
            VectorField::Learned { .. } => "learned",
            VectorField::Zero => "zero",
        }
    }

    pub fn eval(&self, ctx: &FlowContext<T>, q: &FieldQuery<'_, T>) -> Result<Vec<T>> {
        check_time(q.t)?;
        let pair = || -> Result<(&[T], &[T])> {
            match (q.f_y, q.z) {
                (Some(f_y), Some(z)) => Ok((f_y, z)),
                _ => Err(Error::InvalidInput(
                    "conditional target needs the (f_y, z) pair".into(),
                )),
            }
        };
        let out = match *self {
            VectorField::ConditionalTarget => {
                let (f_y, z) = pair()?;
                ctx.conditional_target_field(f_y, q.x, z)?
            }
            VectorField::Perturbed { direction, scale } => {
                let (f_y, z) = pair()?;
                let mut v = ctx.conditional_target_field(f_y, q.x, z)?;
                ctx.check_len(direction)?;
                axpy(scale, direction, &mut v);
                v
            }
            VectorField::Oracle {
                predictor,
                with_state_term,
            } => ctx.oracle_field(predictor, q.x, q.f_x, with_state_term)?,
            VectorField::DriftOnly { predictor } => ctx.oracle_field(predictor, q.x, q.f_x, false)?,
            VectorField::Learned { params } => params.field(q.x, q.f_x, q.t)?,
            VectorField::Zero => {
                ctx.check_len(q.x)?;
                vec![T::zero(); ctx.n_output()]
            }
        };
        if out.len() != ctx.n_output() {
            return Err(Error::shape(ctx.n_output(), out.len()));
        }
        Ok(out)
    }
}

/// One Monte Carlo draw `(f, t, z)` with its flow state and target.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowDraw<T> {
    pub sample: usize,
    pub t: T,
    pub z: Vec<T>,
    pub psi: Vec<T>,
    pub target: Vec<T>,
}

/// Draw `k` uses its own stream derived from `(seed, k)`: `f` uniform over the
/// dataset, `t ~ U[0, 1)`, `z ~ N(0, I)`.
pub fn draw_flow_batch<T: Scalar>(
    ctx: &FlowContext<T>,
    dataset: &Dataset<T>,
    count: usize,
    seed: u64,
) -> Result<Vec<FlowDraw<T>>> {
    if count == 0 {
        return Err(Error::InvalidConfig("mc_samples must be >= 1".into()));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    if dataset.index_sets.n_output() != ctx.n_output() {
        return Err(Error::shape(ctx.n_output(), dataset.index_sets.n_output()));
    }
    (0..count)
        .map(|k| {
            let mut g = GaussianStream::new(derive_seed(seed, &[k as u64]), FM_STREAM);
            let sample = g.index(dataset.len());
            let t: T = g.uniform();
            let z: Vec<T> = g.vector(ctx.n_output());
            let f_y = &dataset.samples[sample].f_y;
            let psi = ctx.psi_t(f_y, &z, t)?;
            let target = ctx.conditional_target_field(f_y, &psi, &z)?;
            Ok(FlowDraw {
                sample,
                t,
                z,
                psi,
                target,
            })
        })
        .collect()
}

/// Mean of `‖field(ψ_t, f_x, t) − dψ_t/dt‖²` over prepared draws.
pub fn batch_loss<T: Scalar>(
    field: &VectorField<'_, T>,
    ctx: &FlowContext<T>,
    dataset: &Dataset<T>,
    draws: &[FlowDraw<T>],
) -> Result<T> {
    let mut total = T::zero();
    for d in draws {
        let s = &dataset.samples[d.sample];
        let q = FieldQuery {
            x: &d.psi,
            f_x: &s.f_x,
            t: d.t,
            f_y: Some(&s.f_y),
            z: Some(&d.z),
        };
        total += norm2_sq(&sub(&field.eval(ctx, &q)?, &d.target));
    }
    let loss = total / T::from_count(draws.len().max(1));
    if !loss.is_finite() {
        return Err(Error::Divergence {
            at: "flow-matching loss".into(),
            detail: format!("loss = {loss}"),
        });
    }
    Ok(loss)
}

/// Monte Carlo flow-matching loss; deterministic given `seed`.
pub fn fm_loss<T: Scalar>(
    field: &VectorField<'_, T>,
    ctx: &FlowContext<T>,
    dataset: &Dataset<T>,
    mc_samples: usize,
    seed: u64,
) -> Result<T> {
    let draws = draw_flow_batch(ctx, dataset, mc_samples, seed)?;
    batch_loss(field, ctx, dataset, &draws)
}

#[derive(Debug, Clone, Serialize)]
pub struct LossRow {
    pub step: usize,
    pub loss: f64,
    pub seed: u64,
    pub mc_samples: usize,
}

/// `step,loss,seed,mc_samples`.
pub fn write_loss_csv<W: Write>(rows: &[LossRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
