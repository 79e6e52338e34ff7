//! Polynomial-regularized flow matching for time-series generation.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` / `*32` aliases below fix the precision for everyday use.

pub mod check;
pub mod datamodel;
pub mod dit;
pub mod error;
pub mod flow;
pub mod linalg;
pub mod polybasis;
pub mod predictor;
pub mod rng;
pub mod sampler;
pub mod scalar;

pub use check::CheckReport;
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type Basis64 = polybasis::PolynomialBasis<f64>;
pub type Basis32 = polybasis::PolynomialBasis<f32>;
pub type Dataset64 = datamodel::Dataset<f64>;
pub type SeriesSample64 = datamodel::SeriesSample<f64>;
pub type SignalSpec64 = datamodel::SignalSpec<f64>;
pub type FlowContext64 = flow::FlowContext<f64>;
pub type FlowContext32 = flow::FlowContext<f32>;
pub type DitParams64 = dit::DitParams<f64>;
pub type DitParams32 = dit::DitParams<f32>;
pub type GdView64 = sampler::GdView<f64>;
