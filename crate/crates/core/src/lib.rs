//! Multiclass regularized sample covariance matrix (RSCM) estimation.
//!
//! Each class covariance is shrunk twice: toward the pooled SCM of all
//! classes (tuning parameter `beta`) and then toward a scaled identity
//! (tuning parameter `alpha`). The tuning parameters minimize the exact
//! MSE of the estimator, which is a bivariate polynomial whose coefficients
//! depend only on per-class scale, sphericity, elliptical kurtosis and the
//! cross-class inner products of the population covariances. Those scalars
//! are estimated from data under an elliptical model.
//!
//! Module layout follows the estimation pipeline:
//!
//! * [`synth`] - structured covariances and elliptical samplers
//! * [`stats`] - SCM, pooled SCM, spatial median, spatial sign covariance
//! * [`params`] - plug-in moment estimates
//! * [`msepoly`] - MSE polynomial coefficients and a Monte Carlo oracle
//! * [`tuning`] - biconvex and closed-form minimization of the polynomials
//! * [`shrink`] - estimator assembly for every method
//! * [`rda`] - regularized discriminant analysis and grid cross-validation
//! * [`data`] and [`harness`] - CSV ingestion and the experiment runners


pub mod data;
pub mod error;
pub mod harness;
pub mod json;
pub mod msepoly;
pub mod params;
pub mod rda;
pub mod rng;
pub mod shrink;
pub mod stats;
pub mod synth;
pub mod tuning;

pub use error::{Result, RscmError};

pub use nalgebra::{DMatrix, DVector};

/// Frobenius inner product `tr(AᵀB)`.
pub fn frobenius_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}
