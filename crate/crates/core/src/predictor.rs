//! Reference predictors `F*` (Gaussian-kernel smoother projected on the
//! basis) and `F̂` (least-squares fit on the observed window), their risks,
//! and the generalization study built on `F̂`.

use std::io::Write;

use serde::Serialize;

use crate::datamodel::{observation_matrix, Dataset, IndexSets, SeriesSample};
use crate::error::{Error, Result};
use crate::linalg::{pinv_from_svd, svd, Matrix};
use crate::polybasis::{build_basis, PolynomialBasis};
use crate::scalar::{axpy, norm2_sq, sub, Scalar};

/// A map `f_x ↦ f̂_y`.
pub trait Predictor<T: Scalar>: Send + Sync {
    fn predict(&self, f_x: &[T]) -> Result<Vec<T>>;

    fn name(&self) -> &'static str;
}

/// `G = M(I_y) P`.
pub fn g_matrix<T: Scalar>(basis: &PolynomialBasis<T>, sets: &IndexSets) -> Result<Matrix<T>> {
    if basis.n_points() != sets.n_points {
        return Err(Error::shape(
            format!("basis over N = {}", sets.n_points),
            format!("N = {}", basis.n_points()),
        ));
    }
    Ok(observation_matrix::<T>(&sets.output, sets.n_points)?.matmul(basis.matrix()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth<T> {
    Fixed(T),
    /// 10th percentile of pairwise `‖f_x − f'_x‖²` over the dataset.
    Auto,
}

pub fn auto_bandwidth<T: Scalar>(dataset: &Dataset<T>) -> T {
    let mut d2: Vec<T> = Vec::new();
    for (i, a) in dataset.samples.iter().enumerate() {
        for b in &dataset.samples[i + 1..] {
            d2.push(norm2_sq(&sub(&a.f_x, &b.f_x)));
        }
    }
    d2.retain(|v| *v > T::zero());
    if d2.is_empty() {
        return T::one();
    }
    d2.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    d2[(d2.len() - 1) / 10]
}

/// `F*(f_x) = G · P† · Φ(f_x)` with the Nadaraya–Watson average
/// `Φ(f_x) = Σ K(f_x, f'_x) f / Σ K(f_x, f'_x)`,
/// `K(a, b) = exp(−‖a − b‖² / (2h))`.
#[derive(Debug, Clone)]
pub struct KernelPredictor<T> {
    inputs: Vec<Vec<T>>,
    series: Vec<Vec<T>>,
    bandwidth: T,
    g: Matrix<T>,
    p_pinv: Matrix<T>,
}

impl<T: Scalar> KernelPredictor<T> {
    pub fn new(
        dataset: &Dataset<T>,
        basis: &PolynomialBasis<T>,
        bandwidth: Bandwidth<T>,
    ) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::InvalidInput("kernel predictor needs a non-empty dataset".into()));
        }
        let h = match bandwidth {
            Bandwidth::Fixed(h) => h,
            Bandwidth::Auto => auto_bandwidth(dataset),
        };
        if !(h.is_finite() && h > T::zero()) {
            return Err(Error::InvalidConfig(format!("bandwidth h = {h} must be > 0")));
        }
        Ok(Self {
            inputs: dataset.samples.iter().map(|s| s.f_x.clone()).collect(),
            series: dataset.samples.iter().map(|s| s.f.clone()).collect(),
            bandwidth: h,
            g: g_matrix(basis, &dataset.index_sets)?,
            p_pinv: basis.pinv().clone(),
        })
    }

    pub fn bandwidth(&self) -> T {
        self.bandwidth
    }

    pub fn g(&self) -> &Matrix<T> {
        &self.g
    }

    /// Normalized kernel weights, computed in the log domain.
    pub fn weights(&self, f_x: &[T]) -> Result<Vec<T>> {
        let n_x = self.inputs[0].len();
        if f_x.len() != n_x {
            return Err(Error::shape(n_x, f_x.len()));
        }
        let two_h = self.bandwidth + self.bandwidth;
        let logs: Vec<T> = self
            .inputs
            .iter()
            .map(|x| -norm2_sq(&sub(f_x, x)) / two_h)
            .collect();
        let peak = logs.iter().copied().fold(T::neg_infinity(), T::max);
        if !peak.is_finite() {
            return Err(Error::DegenerateBandwidth(self.bandwidth.as_f64()));
        }
        let raw: Vec<T> = logs.iter().map(|&l| (l - peak).exp()).collect();
        let total: T = raw.iter().copied().sum();
        if !(total.is_finite() && total > T::zero()) {
            return Err(Error::DegenerateBandwidth(self.bandwidth.as_f64()));
        }
        Ok(raw.into_iter().map(|w| w / total).collect())
    }

    pub fn phi(&self, f_x: &[T]) -> Result<Vec<T>> {
        let w = self.weights(f_x)?;
        let mut out = vec![T::zero(); self.series[0].len()];
        for (wi, f) in w.into_iter().zip(&self.series) {
            axpy(wi, f, &mut out);
        }
        Ok(out)
    }

    pub fn f_star(&self, f_x: &[T]) -> Result<Vec<T>> {
        let phi = self.phi(f_x)?;
        Ok(self.g.matvec(&self.p_pinv.matvec(&phi)))
    }
}

impl<T: Scalar> Predictor<T> for KernelPredictor<T> {
    fn predict(&self, f_x: &[T]) -> Result<Vec<T>> {
        self.f_star(f_x)
    }

    fn name(&self) -> &'static str {
        "kernel"
    }
}

/// `F̂(f_x) = G · (M(I_x) P)† · f_x`.
#[derive(Debug, Clone)]
pub struct RegularizedPredictor<T> {
    g: Matrix<T>,
    mxp_pinv: Matrix<T>,
    lambda_min: T,
    n_input: usize,
}

impl<T: Scalar> RegularizedPredictor<T> {
    /// Fails when `M(I_x) P` is rank deficient.
    pub fn new(basis: &PolynomialBasis<T>, sets: &IndexSets) -> Result<Self> {
        let g = g_matrix(basis, sets)?;
        let mxp = observation_matrix::<T>(&sets.input, sets.n_points)?.matmul(basis.matrix());
        if mxp.cols() > mxp.rows() {
            return Err(Error::RankDeficient {
                what: format!("M(I_x)P ({}x{}, n > N_x)", mxp.rows(), mxp.cols()),
                lambda_min: 0.0,
            });
        }
        let f = svd(&mxp)?;
        let smax = f.singular_values[0];
        let lambda_min = *f.singular_values.last().expect("non-empty");
        if !(lambda_min > T::rank_cutoff() * smax) {
            return Err(Error::RankDeficient {
                what: "M(I_x)P".into(),
                lambda_min: lambda_min.as_f64(),
            });
        }
        Ok(Self {
            g,
            mxp_pinv: pinv_from_svd(&f),
            lambda_min,
            n_input: sets.n_input(),
        })
    }

    pub fn g(&self) -> &Matrix<T> {
        &self.g
    }

    /// `λ_min(M(I_x) P)`.
    pub fn lambda_min(&self) -> T {
        self.lambda_min
    }

    pub fn f_hat(&self, f_x: &[T]) -> Result<Vec<T>> {
        if f_x.len() != self.n_input {
            return Err(Error::shape(self.n_input, f_x.len()));
        }
        Ok(self.g.matvec(&self.mxp_pinv.matvec(f_x)))
    }
}

impl<T: Scalar> Predictor<T> for RegularizedPredictor<T> {
    fn predict(&self, f_x: &[T]) -> Result<Vec<T>> {
        self.f_hat(f_x)
    }

    fn name(&self) -> &'static str {
        "regularized"
    }
}

/// Returns the same stored output for every input.
#[derive(Debug, Clone)]
pub struct FixedOutput<T> {
    pub output: Vec<T>,
}

impl<T: Scalar> Predictor<T> for FixedOutput<T> {
    fn predict(&self, _f_x: &[T]) -> Result<Vec<T>> {
        Ok(self.output.clone())
    }

    fn name(&self) -> &'static str {
        "fixed"
    }
}

/// Mean of `‖pred(f_x) − f_y‖²` over `eval_set`.
pub fn predictor_risk<T: Scalar>(
    pred: &(impl Predictor<T> + ?Sized),
    eval_set: &[SeriesSample<T>],
) -> Result<T> {
    if eval_set.is_empty() {
        return Err(Error::InvalidInput("empty evaluation set".into()));
    }
    let mut total = T::zero();
    for s in eval_set {
        let y = pred.predict(&s.f_x)?;
        if y.len() != s.f_y.len() {
            return Err(Error::shape(s.f_y.len(), y.len()));
        }
        total += norm2_sq(&sub(&y, &s.f_y));
    }
    Ok(total / T::from_count(eval_set.len()))
}

#[derive(Debug, Clone, Serialize)]
pub struct RiskRow {
    pub predictor: String,
    pub v: f64,
    pub n: usize,
    pub risk: f64,
    pub num_samples: usize,
    pub seed: u64,
}

/// `predictor,v,n,risk,num_samples,seed`.
pub fn write_risk_csv<W: Write>(rows: &[RiskRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct GeneralizationPoint {
    pub n: usize,
    pub v: f64,
    /// Mean over the dataset's signals of `‖PP†g − g‖²`.
    pub projection_sq: f64,
    pub risk: f64,
}

/// Non-negative two-term fit `risk ≈ c₁·v + c₂·projection²`.
#[derive(Debug, Clone, Serialize)]
pub struct TwoTermFit {
    pub c_noise: f64,
    pub c_projection: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GeneralizationStudy {
    pub points: Vec<GeneralizationPoint>,
    pub fit: TwoTermFit,
}

impl GeneralizationStudy {
    pub fn risk_rows(&self, num_samples: usize, seed: u64) -> Vec<RiskRow> {
        self.points
            .iter()
            .map(|p| RiskRow {
                predictor: "regularized".into(),
                v: p.v,
                n: p.n,
                risk: p.risk,
                num_samples,
                seed,
            })
            .collect()
    }
}

/// Risk of `F̂` on fresh antithetic resamples over a `(n, v)` grid. The same
/// resample seed is used for every cell so noise patterns are shared across
/// `v`; since `F̂` is affine the mirrored pairs cancel the bias-noise cross
/// term.
pub fn generalization_study<T: Scalar>(
    dataset: &Dataset<T>,
    sizes: &[usize],
    variances: &[T],
    resamples: usize,
    seed: u64,
) -> Result<GeneralizationStudy> {
    let n_points = dataset.n_points();
    let signals = dataset.signals();
    let mut points = Vec::with_capacity(sizes.len() * variances.len());
    for &n in sizes {
        let basis = build_basis::<T>(n_points, n)?;
        let pred = RegularizedPredictor::new(&basis, &dataset.index_sets)?;
        let mut proj = 0.0;
        for s in &signals {
            let delta = dataset
                .samples
                .iter()
                .find(|x| &x.signal == s)
                .expect("signal from dataset")
                .delta;
            proj += basis.approx_error(&s.grid(n_points, delta))?.as_f64().powi(2);
        }
        proj /= signals.len() as f64;
        for &v in variances {
            let fresh = dataset.resample_antithetic(v, resamples, seed)?;
            points.push(GeneralizationPoint {
                n,
                v: v.as_f64(),
                projection_sq: proj,
                risk: predictor_risk(&pred, &fresh)?.as_f64(),
            });
        }
    }
    let fit = fit_two_term(&points);
    Ok(GeneralizationStudy { points, fit })
}

/// Least squares over the non-negative orthant in two variables: the
/// unconstrained solution if feasible, otherwise the better single-feature
/// fit.
pub fn fit_two_term(points: &[GeneralizationPoint]) -> TwoTermFit {
    let xs: Vec<[f64; 2]> = points.iter().map(|p| [p.v, p.projection_sq]).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.risk).collect();
    let sse = |c: [f64; 2]| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(x, y)| (y - c[0] * x[0] - c[1] * x[1]).powi(2))
            .sum()
    };
    let s = |a: usize, b: usize| -> f64 { xs.iter().map(|x| x[a] * x[b]).sum() };
    let sy = |a: usize| -> f64 { xs.iter().zip(&ys).map(|(x, y)| x[a] * y).sum() };
    let mut candidates: Vec<[f64; 2]> = vec![[0.0, 0.0]];
    let det = s(0, 0) * s(1, 1) - s(0, 1) * s(0, 1);
    if det.abs() > 0.0 {
        let c0 = (sy(0) * s(1, 1) - sy(1) * s(0, 1)) / det;
        let c1 = (sy(1) * s(0, 0) - sy(0) * s(0, 1)) / det;
        if c0 >= 0.0 && c1 >= 0.0 {
            candidates.push([c0, c1]);
        }
    }
    if s(0, 0) > 0.0 {
        candidates.push([(sy(0) / s(0, 0)).max(0.0), 0.0]);
    }
    if s(1, 1) > 0.0 {
        candidates.push([0.0, (sy(1) / s(1, 1)).max(0.0)]);
    }
    let best = candidates
        .into_iter()
        .min_by(|a, b| sse(*a).partial_cmp(&sse(*b)).expect("finite"))
        .expect("non-empty");
    let mean = ys.iter().sum::<f64>() / ys.len().max(1) as f64;
    let sst: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    TwoTermFit {
        c_noise: best[0],
        c_projection: best[1],
        r_squared: if sst > 0.0 { 1.0 - sse(best) / sst } else { 1.0 },
    }
}
