//! Assembly of the regularized class covariance estimates.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RscmError};
use crate::msepoly::{self, TraceTarget};
use crate::params::{InnerProductMode, PopulationMoments};
use crate::stats::SampleStats;
use crate::tuning::{self, FullOptions, TuningMethod, TuningResult};

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(RscmError::InvalidParameter(format!(
            "{name} = {v} is outside [0, 1]"
        )));
    }
    Ok(())
}

fn check_same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(RscmError::DimensionMismatch {
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    if a.shape() != b.shape() {
        return Err(RscmError::DimensionMismatch {
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    Ok(())
}

/// `β S_k + (1-β) S`
pub fn partially_pooled(
    class_scm: &DMatrix<f64>,
    pooled: &DMatrix<f64>,
    beta: f64,
) -> Result<DMatrix<f64>> {
    check_same_shape(class_scm, pooled)?;
    check_unit("beta", beta)?;
    Ok(class_scm * beta + pooled * (1.0 - beta))
}

fn shrink_to_scaled_identity(m: DMatrix<f64>, alpha: f64, scale: f64) -> DMatrix<f64> {
    let mut out = m * alpha;
    for i in 0..out.nrows() {
        out[(i, i)] += (1.0 - alpha) * scale;
    }
    out
}

/// `α M̂_k(β) + (1-α) I_{M̂_k(β)}`
pub fn coupled_rscm(
    class_scm: &DMatrix<f64>,
    pooled: &DMatrix<f64>,
    alpha: f64,
    beta: f64,
) -> Result<DMatrix<f64>> {
    check_unit("alpha", alpha)?;
    let partial = partially_pooled(class_scm, pooled, beta)?;
    let scale = partial.trace() / partial.nrows() as f64;
    Ok(shrink_to_scaled_identity(partial, alpha, scale))
}

/// `α M̂_k(β) + (1-α) I_T` with `T` the pooled or the class SCM.
pub fn streamlined_rscm(
    class_scm: &DMatrix<f64>,
    pooled: &DMatrix<f64>,
    alpha: f64,
    beta: f64,
    target: TraceTarget,
) -> Result<DMatrix<f64>> {
    check_unit("alpha", alpha)?;
    let partial = partially_pooled(class_scm, pooled, beta)?;
    let p = partial.nrows() as f64;
    let scale = match target {
        TraceTarget::PooledTrace => pooled.trace(),
        TraceTarget::ClassTrace => class_scm.trace(),
    } / p;
    Ok(shrink_to_scaled_identity(partial, alpha, scale))
}

/// Estimation method for the whole class collection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "SCM")]
    Scm,
    #[serde(rename = "POOL")]
    Pool,
    C1,
    C2,
    C3,
    #[serde(rename = "POLY")]
    Poly,
    #[serde(rename = "POLYs")]
    PolyS,
    #[serde(rename = "POLY-Ave")]
    PolyAve,
    #[serde(rename = "POLYs-Ave")]
    PolySAve,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Scm,
        Method::Pool,
        Method::C1,
        Method::C2,
        Method::C3,
        Method::Poly,
        Method::PolyS,
        Method::PolyAve,
        Method::PolySAve,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Scm => "SCM",
            Method::Pool => "POOL",
            Method::C1 => "C1",
            Method::C2 => "C2",
            Method::C3 => "C3",
            Method::Poly => "POLY",
            Method::PolyS => "POLYs",
            Method::PolyAve => "POLY-Ave",
            Method::PolySAve => "POLYs-Ave",
        }
    }

    pub fn variant(self) -> Variant {
        match self {
            Method::Scm => Variant::Scm,
            Method::Pool => Variant::Pooled,
            Method::C1 => Variant::C1,
            Method::C2 => Variant::C2,
            Method::C3 => Variant::C3,
            Method::Poly | Method::PolyAve => Variant::Full,
            Method::PolyS | Method::PolySAve => Variant::Streamlined,
        }
    }

    fn needs_moments(self) -> bool {
        !matches!(self, Method::Scm | Method::Pool)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = RscmError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['_', ' '], "-");
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name().to_ascii_lowercase() == key)
            .ok_or_else(|| RscmError::Input(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Full,
    Streamlined,
    C1,
    C2,
    C3,
    C4,
    Scm,
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageEstimate {
    #[serde(with = "crate::json::rows")]
    pub matrix: DMatrix<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub variant: Variant,
    /// Per-class tuning before any averaging.
    pub tuning: Option<TuningResult>,
}

fn fixed(alpha: f64, beta: f64, mse: f64, method: TuningMethod) -> TuningResult {
    TuningResult {
        alpha,
        beta,
        mse,
        method,
        iterations: 0,
    }
}

/// Per-class tuning of `method`, computed from (estimated or true) moments.
pub fn tune(moments: &PopulationMoments, method: Method) -> Result<Vec<Option<TuningResult>>> {
    (0..moments.num_classes())
        .map(|k| {
            let r = match method {
                Method::Scm | Method::Pool => return Ok(None),
                Method::Poly | Method::PolyAve => tuning::optimize_full(
                    &msepoly::coefficients_full(moments, k)?,
                    FullOptions::default(),
                )?,
                Method::PolyS | Method::PolySAve => tuning::optimize_streamlined(
                    &msepoly::coefficients_streamlined(moments, k, TraceTarget::PooledTrace)?,
                )?,
                Method::C1 | Method::C3 => {
                    let poly = msepoly::coefficients_full(moments, k)?;
                    let beta = if method == Method::C1 { 1.0 } else { 0.0 };
                    let alpha = tuning::alpha_given_beta(&poly, beta)?;
                    fixed(
                        alpha,
                        beta,
                        poly.evaluate(alpha, beta),
                        TuningMethod::Analytic,
                    )
                }
                Method::C2 => {
                    let poly = msepoly::coefficients_full(moments, k)?;
                    let beta = tuning::beta_given_alpha(&poly, 1.0)?;
                    fixed(1.0, beta, poly.evaluate(1.0, beta), TuningMethod::Analytic)
                }
            };
            Ok(Some(r))
        })
        .collect()
}

/// Regularized covariance for every class using `method`.
pub fn estimate_all(stats: &SampleStats, method: Method) -> Result<Vec<ShrinkageEstimate>> {
    let moments = if method.needs_moments() {
        Some(PopulationMoments::estimate(stats, InnerProductMode::Sscm)?)
    } else {
        None
    };
    estimate_with_moments(stats, moments.as_ref(), method)
}

/// As [`estimate_all`] with moments supplied by the caller (estimated once
/// and shared across methods, or ground truth).
pub fn estimate_with_moments(
    stats: &SampleStats,
    moments: Option<&PopulationMoments>,
    method: Method,
) -> Result<Vec<ShrinkageEstimate>> {
    let tunings = match moments {
        Some(m) => tune(m, method)?,
        None if method.needs_moments() => {
            return Err(RscmError::Input(format!(
                "{method} requires population moments"
            )))
        }
        None => vec![None; stats.num_classes()],
    };
    let common = match method {
        Method::PolyAve | Method::PolySAve => {
            let rs: Vec<TuningResult> = tunings.iter().flatten().copied().collect();
            Some(tuning::average_tuning(&rs)?)
        }
        _ => None,
    };
    stats
        .classes
        .iter()
        .zip(tunings)
        .map(|(c, t)| {
            let (alpha, beta) = match (method, common, t) {
                (Method::Scm, ..) => (1.0, 1.0),
                (Method::Pool, ..) => (1.0, 0.0),
                (_, Some(ab), _) => ab,
                (_, None, Some(t)) => (t.alpha, t.beta),
                (_, None, None) => unreachable!("tuned methods always carry a result"),
            };
            let matrix = match method.variant() {
                Variant::Streamlined => {
                    streamlined_rscm(&c.scm, &stats.pooled, alpha, beta, TraceTarget::PooledTrace)?
                }
                _ => coupled_rscm(&c.scm, &stats.pooled, alpha, beta)?,
            };
            Ok(ShrinkageEstimate {
                matrix,
                alpha,
                beta,
                variant: method.variant(),
                tuning: t,
            })
        })
        .collect()
}
