//! Executable forms of the two pseudoinverse norm bounds.

use crate::check::CheckReport;
use crate::error::{Error, Result};
use crate::linalg::{pinv_from_svd, spectral_norm, svd, Matrix};
use crate::scalar::Scalar;

/// `‖A†‖₂ ≤ 1 / λ_min(A)`.
///
/// The ℓ∞ operator-norm reading is recorded in `details` against the same
/// bound scaled by `√d` (`d` = rows of `A`), which is what norm equivalence
/// allows.
pub fn check_pinv_norm_bound<T: Scalar>(a: &Matrix<T>) -> Result<CheckReport> {
    let f = svd(a)?;
    let lambda_min = *f.singular_values.last().expect("non-empty");
    if lambda_min.as_f64() <= 1e-10 {
        return Err(Error::Precondition(format!(
            "λ_min(A) = {:e} must exceed 1e-10",
            lambda_min.as_f64()
        )));
    }
    let a_pinv = pinv_from_svd(&f);
    let lhs = spectral_norm(&a_pinv)?.as_f64();
    let rhs = 1.0 / lambda_min.as_f64();
    let linf = a_pinv.inf_norm().as_f64();
    let linf_rhs = (a.rows() as f64).sqrt() * rhs;
    Ok(CheckReport::new(lhs <= rhs * (1.0 + 1e-8), lhs, rhs)
        .with("linf_lhs", linf)
        .with("linf_rhs", linf_rhs)
        .with("linf_holds", f64::from(u8::from(linf <= linf_rhs * (1.0 + 1e-8)))))
}

/// `‖A† − B†‖₂ ≤ max(‖A†‖₂², ‖B†‖₂²) · ‖A − B‖₂`, restricted to full
/// column rank pairs with `‖A − B‖₂ ≤ 0.1 · min(λ_min(A), λ_min(B))`.
pub fn check_pinv_perturbation_bound<T: Scalar>(
    a: &Matrix<T>,
    b: &Matrix<T>,
) -> Result<CheckReport> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            format!("{}x{}", a.rows(), a.cols()),
            format!("{}x{}", b.rows(), b.cols()),
        ));
    }
    if a.cols() > a.rows() {
        return Err(Error::Precondition(
            "full column rank requires cols <= rows".into(),
        ));
    }
    let fa = svd(a)?;
    let fb = svd(b)?;
    let la = fa.singular_values.last().expect("non-empty").as_f64();
    let lb = fb.singular_values.last().expect("non-empty").as_f64();
    if la < 1e-6 || lb < 1e-6 {
        return Err(Error::Precondition(format!(
            "λ_min(A) = {la:e}, λ_min(B) = {lb:e}; both must be >= 1e-6"
        )));
    }
    let diff = spectral_norm(&a.sub(b))?.as_f64();
    if diff > 0.1 * la.min(lb) {
        return Err(Error::Precondition(format!(
            "‖A − B‖₂ = {diff:e} exceeds 0.1·min λ_min = {:e}",
            0.1 * la.min(lb)
        )));
    }
    let ap = pinv_from_svd(&fa);
    let bp = pinv_from_svd(&fb);
    let lhs = if diff == 0.0 {
        0.0
    } else {
        spectral_norm(&ap.sub(&bp))?.as_f64()
    };
    let na = spectral_norm(&ap)?.as_f64();
    let nb = spectral_norm(&bp)?.as_f64();
    let rhs = (na * na).max(nb * nb) * diff;
    Ok(CheckReport::new(lhs <= rhs * (1.0 + 1e-6), lhs, rhs).with("diff_norm", diff))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::GaussianStream;

    #[test]
    fn norm_bound_equality_cases() {
        let r = check_pinv_norm_bound(&Matrix::diag(&[2.0_f64, 4.0])).unwrap();
        assert!(r.bound_holds);
        assert!((r.lhs - 0.5).abs() < 1e-15 && (r.rhs - 0.5).abs() < 1e-15);
        let r = check_pinv_norm_bound(&Matrix::<f64>::identity(3)).unwrap();
        assert!(r.bound_holds && (r.lhs - 1.0).abs() < 1e-15);
    }

    #[test]
    fn norm_bound_rejects_singular() {
        let s = Matrix::from_rows(&[vec![1.0_f64, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(check_pinv_norm_bound(&s), Err(Error::Precondition(_))));
    }

    #[test]
    fn perturbation_diagonal_cases() {
        let a = Matrix::diag(&[2.0_f64, 4.0]);
        let r = check_pinv_perturbation_bound(&a, &a).unwrap();
        assert!(r.bound_holds && r.lhs == 0.0 && r.rhs == 0.0);
        let b = Matrix::diag(&[2.1_f64, 4.0]);
        let r = check_pinv_perturbation_bound(&a, &b).unwrap();
        assert!(r.bound_holds);
        assert!((r.lhs - (0.5 - 1.0 / 2.1)).abs() < 1e-12);
        assert!((r.rhs - 0.025).abs() < 1e-12);
    }

    #[test]
    fn perturbation_preconditions() {
        let a = Matrix::diag(&[2.0_f64, 4.0]);
        let far = Matrix::diag(&[3.0_f64, 4.0]);
        assert!(matches!(
            check_pinv_perturbation_bound(&a, &far),
            Err(Error::Precondition(_))
        ));
        let wrong = Matrix::<f64>::identity(3);
        assert!(matches!(
            check_pinv_perturbation_bound(&a, &wrong),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn norm_bound_is_tight_for_full_column_rank() {
        let mut g = GaussianStream::new(4, 0);
        let a = Matrix::from_fn(7, 4, |_, _| g.next_value::<f64>());
        let r = check_pinv_norm_bound(&a).unwrap();
        assert!((r.lhs * (1.0 / r.rhs) - 1.0).abs() < 1e-8);
        assert!(r.details["linf_holds"] == 1.0);
    }
}
