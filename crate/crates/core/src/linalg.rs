//! Dense linear algebra: matrices, SVD, pseudoinverse and the pseudoinverse
//! norm lemmas.

mod lemmas;
mod matrix;
mod svd;

pub use lemmas::{check_pinv_norm_bound, check_pinv_perturbation_bound};
pub use matrix::Matrix;
pub use svd::{
    min_singular_value, pinv, pinv_from_svd, singular_values, spectral_norm, svd, SvdFactors,
};
