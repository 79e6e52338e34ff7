//! Discrete orthogonal polynomial basis on the uniform grid `τ/N` and the
//! projection `PP†` onto it.

use std::io::Write;

use serde::Serialize;

use crate::datamodel::SignalSpec;
use crate::error::{Error, Result};
use crate::linalg::{min_singular_value, pinv, Matrix};
use crate::scalar::{norm2, sub, Scalar};

const LINF_GUARD: f64 = 1e12;
const GRAM_TOL: f64 = 1e-8;

/// `N × n` basis whose column `i` is a degree-`i` polynomial (0-based),
/// orthonormal under the uniform discrete measure `1/N`.
#[derive(Debug, Clone)]
pub struct PolynomialBasis<T> {
    n_points: usize,
    p: Matrix<T>,
    p_pinv: Matrix<T>,
    weights: Vec<T>,
    lambda_min: T,
    linf_norm: T,
}

pub fn grid<T: Scalar>(n_points: usize) -> Vec<T> {
    let n = T::from_count(n_points);
    (1..=n_points).map(|tau| T::from_count(tau) / n).collect()
}

fn weighted_dot<T: Scalar>(w: &[T], a: &[T], b: &[T]) -> T {
    w.iter()
        .zip(a.iter().zip(b))
        .fold(T::zero(), |acc, (&wi, (&x, &y))| acc + wi * x * y)
}

/// Modified Gram–Schmidt over `1, x·P₁, x·P₂, …` (two passes), which spans
/// the monomials `1, x, …, x^{k}` at every step.
pub fn build_basis<T: Scalar>(n_points: usize, size: usize) -> Result<PolynomialBasis<T>> {
    if size == 0 || size > n_points {
        return Err(Error::InvalidConfig(format!(
            "basis size n = {size} must satisfy 1 <= n <= N = {n_points}"
        )));
    }
    let x = grid::<T>(n_points);
    let w = vec![T::one() / T::from_count(n_points); n_points];
    let mut cols: Vec<Vec<T>> = Vec::with_capacity(size);
    for k in 0..size {
        let mut v: Vec<T> = match cols.last() {
            None => vec![T::one(); n_points],
            Some(prev) => prev.iter().zip(&x).map(|(&p, &xi)| p * xi).collect(),
        };
        let start = weighted_dot(&w, &v, &v).sqrt();
        for _ in 0..2 {
            for c in &cols {
                let proj = weighted_dot(&w, c, &v);
                for (vi, &ci) in v.iter_mut().zip(c) {
                    *vi -= proj * ci;
                }
            }
        }
        let nrm = weighted_dot(&w, &v, &v).sqrt();
        if !(nrm > start * T::epsilon() * T::lit(64.0)) {
            return Err(Error::IllConditioned(format!(
                "degree {k} candidate collapsed during orthogonalization"
            )));
        }
        cols.push(v.into_iter().map(|e| e / nrm).collect());
    }
    let p = Matrix::from_columns(&cols)?;
    let linf_norm = p.max_abs();
    if linf_norm.as_f64() > LINF_GUARD {
        return Err(Error::IllConditioned(format!(
            "max |P_ij| = {:e} exceeds {LINF_GUARD:e}",
            linf_norm.as_f64()
        )));
    }
    let basis = PolynomialBasis {
        n_points,
        p_pinv: pinv(&p)?,
        lambda_min: min_singular_value(&p)?,
        p,
        weights: w,
        linf_norm,
    };
    let off = basis.gram_off_diagonal();
    let tol = GRAM_TOL.max(1e3 * T::epsilon().as_f64() * size as f64);
    if off.as_f64() > tol {
        return Err(Error::IllConditioned(format!(
            "weighted Gram off-diagonal mass {:e}",
            off.as_f64()
        )));
    }
    Ok(basis)
}

impl<T: Scalar> PolynomialBasis<T> {
    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn size(&self) -> usize {
        self.p.cols()
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.p
    }

    pub fn pinv(&self) -> &Matrix<T> {
        &self.p_pinv
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn lambda_min(&self) -> T {
        self.lambda_min
    }

    pub fn linf_norm(&self) -> T {
        self.linf_norm
    }

    /// `Pᵀ diag(w) P`.
    pub fn weighted_gram(&self) -> Matrix<T> {
        let wp = Matrix::from_fn(self.n_points, self.size(), |i, j| {
            self.weights[i] * self.p[(i, j)]
        });
        self.p.tr_matmul(&wp)
    }

    /// Sum of absolute off-diagonal entries of the weighted Gram matrix.
    pub fn gram_off_diagonal(&self) -> T {
        let g = self.weighted_gram();
        let n = g.rows();
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| g[(i, j)].abs())
            .sum()
    }

    /// `PP†`.
    pub fn projector(&self) -> Matrix<T> {
        self.p.matmul(&self.p_pinv)
    }

    fn check_len(&self, f: &[T]) -> Result<()> {
        if f.len() == self.n_points {
            Ok(())
        } else {
            Err(Error::shape(self.n_points, f.len()))
        }
    }

    /// `(P†f, PP†f)`.
    pub fn project(&self, f: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        self.check_len(f)?;
        let coeffs = self.p_pinv.matvec(f);
        let recon = self.p.matvec(&coeffs);
        Ok((coeffs, recon))
    }

    /// `‖PP†f − f‖₂`.
    pub fn approx_error(&self, f: &[T]) -> Result<T> {
        let (_, recon) = self.project(f)?;
        Ok(norm2(&sub(&recon, f)))
    }

    /// `tau,P1..Pn`, τ 1-based.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["tau".to_string()];
        header.extend((1..=self.size()).map(|i| format!("P{i}")));
        w.write_record(&header)?;
        for i in 0..self.n_points {
            let mut rec = vec![(i + 1).to_string()];
            rec.extend(self.p.row(i).iter().map(|v| format!("{v:e}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingRow {
    pub n: usize,
    pub error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of `ln error` against `ln n`; `None` when some
    /// error is at round-off level (≤ 1e-12 ‖f‖) and the log is meaningless.
    pub slope: Option<f64>,
}

impl ScalingTable {
    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].error < w[0].error)
    }
}

/// Projection error of the noise-free signal sample for each basis size.
pub fn scaling_study<T: Scalar>(
    signal: &SignalSpec<T>,
    delta: T,
    n_points: usize,
    sizes: &[usize],
) -> Result<ScalingTable> {
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("basis sizes must be strictly increasing".into()));
    }
    if *sizes.last().expect("non-empty") > n_points {
        return Err(Error::InvalidConfig("basis size exceeds N".into()));
    }
    let f = signal.grid(n_points, delta);
    let rows = sizes
        .iter()
        .map(|&n| {
            let b = build_basis::<T>(n_points, n)?;
            Ok(ScalingRow {
                n,
                error: b.approx_error(&f)?.as_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let floor = 1e-12 * norm2(&f).as_f64().max(1.0);
    let slope = if rows.len() >= 2 && rows.iter().all(|r| r.error > floor) {
        let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.error.ln()).collect();
        Some(fit_slope(&xs, &ys))
    } else {
        None
    };
    Ok(ScalingTable { rows, slope })
}

fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::SignalFamily;
    use crate::linalg::pinv;
    use crate::rng::GaussianStream;
    use std::f64::consts::TAU;

    fn sine(n: usize) -> Vec<f64> {
        (1..=n).map(|t| (TAU * t as f64 / n as f64).sin()).collect()
    }

    #[test]
    fn degree_zero_column_is_ones() {
        let b = build_basis::<f64>(4, 1).unwrap();
        assert!(b.matrix().as_slice().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn gram_is_diagonal_and_pd() {
        let b = build_basis::<f64>(32, 8).unwrap();
        assert!(b.gram_off_diagonal() <= 1e-8);
        assert!(b.lambda_min() > 0.0);
        let g = b.weighted_gram();
        for i in 0..8 {
            assert!((g[(i, i)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn full_basis_spans_everything() {
        let b = build_basis::<f64>(8, 8).unwrap();
        assert!(b.projector().sub(&Matrix::identity(8)).max_abs() <= 1e-8);
    }

    #[test]
    fn columns_have_exact_degree() {
        let n = 16;
        let b = build_basis::<f64>(n, 6).unwrap();
        let x = grid::<f64>(n);
        let vander = |deg: usize| Matrix::from_fn(n, deg + 1, |i, j| x[i].powi(j as i32));
        for i in 0..6 {
            let col = b.matrix().column(i);
            let v = vander(i);
            let fit = v.matvec(&pinv(&v).unwrap().matvec(&col));
            assert!(norm2(&sub(&fit, &col)) <= 1e-8, "column {i} outside degree-{i} span");
            if i > 0 {
                let v = vander(i - 1);
                let fit = v.matvec(&pinv(&v).unwrap().matvec(&col));
                assert!(norm2(&sub(&fit, &col)) > 1e-3, "column {i} has degree < {i}");
            }
        }
    }

    #[test]
    fn size_errors() {
        assert!(matches!(build_basis::<f64>(4, 5), Err(Error::InvalidConfig(_))));
        assert!(build_basis::<f64>(4, 0).is_err());
    }

    #[test]
    fn projection_examples() {
        let b = build_basis::<f64>(12, 3).unwrap();
        let (_, recon) = b.project(&[2.5; 12]).unwrap();
        assert!(norm2(&sub(&recon, &[2.5; 12])) <= 1e-9);

        let mut g = GaussianStream::new(3, 0);
        let c: Vec<f64> = g.vector(3);
        let f = b.matrix().matvec(&c);
        let (coeffs, _) = b.project(&f).unwrap();
        assert!(norm2(&sub(&coeffs, &c)) <= 1e-8);
        assert!(b.project(&[1.0; 5]).is_err());

        let e4 = build_basis::<f64>(64, 4).unwrap().approx_error(&sine(64)).unwrap();
        let e8 = build_basis::<f64>(64, 8).unwrap().approx_error(&sine(64)).unwrap();
        let e16 = build_basis::<f64>(64, 16).unwrap().approx_error(&sine(64)).unwrap();
        assert!(e16 < e8 && e8 < e4);
        let one = build_basis::<f64>(9, 1).unwrap();
        assert!(one.approx_error(&[-1.0; 9]).unwrap() <= 1e-9);
    }

    #[test]
    fn projector_is_idempotent_and_weighted_symmetric() {
        let b = build_basis::<f64>(32, 8).unwrap();
        let pp = b.projector();
        assert!(pp.matmul(&pp).sub(&pp).max_abs() <= 1e-8);
        let w = Matrix::diag(b.weights());
        assert!(w.matmul(&pp).sub(&pp.transpose().matmul(&w)).max_abs() <= 1e-8);
    }

    #[test]
    fn error_is_monotone_in_n() {
        let f = sine(40);
        let errs: Vec<f64> = (1..=20)
            .map(|n| build_basis::<f64>(40, n).unwrap().approx_error(&f).unwrap())
            .collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn scaling_study_examples() {
        let c = SignalSpec::new(SignalFamily::Constant { value: 0.3 }, 64, 0.1).unwrap();
        let t = scaling_study(&c, 0.1, 64, &[1, 4, 8]).unwrap();
        assert!(t.rows.iter().all(|r| r.error <= 1e-9));
        assert!(t.slope.is_none());

        let s = SignalSpec::unit_sine(64, TAU / 64.0).unwrap();
        let t = scaling_study(&s, TAU / 64.0, 64, &[4, 8, 16, 32]).unwrap();
        assert!(t.strictly_decreasing(), "{:?}", t.rows);

        let r = SignalSpec::new(
            SignalFamily::LinearRamp {
                slope: 0.5,
                intercept: -0.2,
            },
            64,
            0.1,
        )
        .unwrap();
        let t = scaling_study(&r, 0.1, 64, &[2, 3, 5]).unwrap();
        assert!(t.rows.iter().all(|row| row.error <= 1e-9));
        assert!(scaling_study(&r, 0.1, 64, &[4, 4]).is_err());
    }

    #[test]
    fn large_bases_stay_orthogonal() {
        let b = build_basis::<f64>(64, 40).unwrap();
        assert!(b.gram_off_diagonal() <= 1e-8);
        assert!(b.linf_norm().is_finite());
    }

    #[test]
    fn csv_header() {
        let b = build_basis::<f64>(4, 2).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("tau,P1,P2\n1,"));
        assert_eq!(s.lines().count(), 5);
    }
}
