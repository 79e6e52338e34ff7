use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{dot, norm2, Scalar};

const MAX_SWEEPS: usize = 80;

/// Thin singular value decomposition `A = U Σ Vᵀ`.
///
/// `u` is `m × k`, `v` is `n × k` with `k = min(m, n)`; both have orthonormal
/// columns. Singular values are sorted non-increasing.
#[derive(Debug, Clone)]
pub struct SvdFactors<T> {
    pub u: Matrix<T>,
    pub singular_values: Vec<T>,
    pub v: Matrix<T>,
}

impl<T: Scalar> SvdFactors<T> {
    /// Number of singular values above `cutoff · σ_max`.
    pub fn rank(&self, cutoff: T) -> usize {
        let smax = self.singular_values.first().copied().unwrap_or_else(T::zero);
        self.singular_values
            .iter()
            .filter(|&&s| s > cutoff * smax && s > T::zero())
            .count()
    }

    pub fn reconstruct(&self) -> Matrix<T> {
        let us = Matrix::from_fn(self.u.rows(), self.u.cols(), |i, j| {
            self.u[(i, j)] * self.singular_values[j]
        });
        us.matmul_tr(&self.v)
    }
}

/// One-sided Jacobi SVD.
pub fn svd<T: Scalar>(a: &Matrix<T>) -> Result<SvdFactors<T>> {
    if !a.is_finite() {
        return Err(Error::InvalidInput("svd of a non-finite matrix".into()));
    }
    if a.rows() >= a.cols() {
        Ok(svd_tall(a))
    } else {
        let t = svd_tall(&a.transpose());
        Ok(SvdFactors {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        })
    }
}

fn svd_tall<T: Scalar>(a: &Matrix<T>) -> SvdFactors<T> {
    let (m, n) = a.shape();
    let mut cols: Vec<Vec<T>> = (0..n).map(|j| a.column(j)).collect();
    let mut vcols: Vec<Vec<T>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { T::one() } else { T::zero() }).collect())
        .collect();
    let eps = T::epsilon();
    let tiny = T::min_positive_value();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma.abs() <= tiny || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (gamma + gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(T, usize)> = cols.iter().map(|c| norm2(c)).zip(0..n).collect();
    order.sort_by(|x, y| y.0.partial_cmp(&x.0).expect("finite norms"));
    let smax = order.first().map_or(T::zero(), |o| o.0);
    let zero_tol = smax * eps * T::from_count(m.max(n));

    let mut u_cols: Vec<Option<Vec<T>>> = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    let mut v_sorted = Vec::with_capacity(n);
    for &(s, j) in &order {
        values.push(s);
        v_sorted.push(vcols[j].clone());
        if s > zero_tol && s > T::zero() {
            u_cols.push(Some(cols[j].iter().map(|&x| x / s).collect()));
        } else {
            u_cols.push(None);
        }
    }
    let u_cols = complete_orthonormal(m, u_cols);

    SvdFactors {
        u: Matrix::from_columns(&u_cols).expect("finite factors"),
        singular_values: values,
        v: Matrix::from_columns(&v_sorted).expect("finite factors"),
    }
}

fn rotate<T: Scalar>(cols: &mut [Vec<T>], p: usize, q: usize, c: T, s: T) {
    let (lo, hi) = cols.split_at_mut(q);
    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fills the `None` slots with unit vectors orthogonal to every other column.
fn complete_orthonormal<T: Scalar>(m: usize, cols: Vec<Option<Vec<T>>>) -> Vec<Vec<T>> {
    let mut basis: Vec<Vec<T>> = cols.iter().flatten().cloned().collect();
    let mut candidate = 0;
    let mut out = Vec::with_capacity(cols.len());
    for slot in cols {
        match slot {
            Some(c) => out.push(c),
            None => loop {
                assert!(candidate < m, "orthonormal completion exhausted");
                let mut e: Vec<T> = (0..m)
                    .map(|i| if i == candidate { T::one() } else { T::zero() })
                    .collect();
                candidate += 1;
                for _ in 0..2 {
                    for b in &basis {
                        let proj = dot(b, &e);
                        for (ei, &bi) in e.iter_mut().zip(b) {
                            *ei -= proj * bi;
                        }
                    }
                }
                let nrm = norm2(&e);
                if nrm > T::lit(0.5) {
                    let e: Vec<T> = e.into_iter().map(|x| x / nrm).collect();
                    basis.push(e.clone());
                    out.push(e);
                    break;
                }
            },
        }
    }
    out
}

/// Moore–Penrose pseudoinverse through the SVD, truncating singular values
/// at or below `1e-12 · σ_max`.
pub fn pinv<T: Scalar>(a: &Matrix<T>) -> Result<Matrix<T>> {
    let f = svd(a)?;
    Ok(pinv_from_svd(&f))
}

pub fn pinv_from_svd<T: Scalar>(f: &SvdFactors<T>) -> Matrix<T> {
    let smax = f.singular_values.first().copied().unwrap_or_else(T::zero);
    let cutoff = T::rank_cutoff() * smax;
    let k = f.singular_values.len();
    let vs = Matrix::from_fn(f.v.rows(), k, |i, j| {
        let s = f.singular_values[j];
        if s > cutoff && s > T::zero() {
            f.v[(i, j)] / s
        } else {
            T::zero()
        }
    });
    vs.matmul_tr(&f.u)
}

pub fn singular_values<T: Scalar>(a: &Matrix<T>) -> Result<Vec<T>> {
    Ok(svd(a)?.singular_values)
}

/// Smallest of the `min(rows, cols)` singular values.
pub fn min_singular_value<T: Scalar>(a: &Matrix<T>) -> Result<T> {
    Ok(*svd(a)?
        .singular_values
        .last()
        .expect("matrix has at least one singular value"))
}

pub fn spectral_norm<T: Scalar>(a: &Matrix<T>) -> Result<T> {
    Ok(svd(a)?.singular_values[0])
}
