//! Exact MSE polynomials of the coupled and streamlined estimators.
//!
//! Every matrix entering the squared error (`S_k`, the pooled `S`, their
//! scaled-identity parts and the target `M_k`) is a linear combination of
//! the class SCMs. Writing such a combination as a weight vector `w` over
//! classes, all required expectations reduce to quadratic forms in two
//! `K × K` Gram matrices:
//!
//! * `G[i][j] = E⟨S_i, S_j⟩`, with `E‖S_j‖²_F` on the diagonal and
//!   `⟨M_i, M_j⟩` off it (classes are independent);
//! * `H[i][j] = E⟨I_{S_i}, I_{S_j}⟩ = E⟨S_i, I_{S_j}⟩`, with `E‖I_{S_j}‖²_F`
//!   on the diagonal and `tr(M_i) tr(M_j) / p` off it.
//!
//! Cross terms with `M_k` are linear: `E⟨S_j, M_k⟩ = ⟨M_j, M_k⟩` and
//! `E⟨I_{S_j}, M_k⟩ = tr(M_j) tr(M_k) / p`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RscmError};
use crate::params::PopulationMoments;
use crate::rng;
use crate::stats;
use crate::synth::{PopulationSpec, Sampler};

/// Splits `A` into `(I_A, Aᴵ)` with `I_A = tr(A)/p · I` and `Aᴵ = A - I_A`.
pub fn identity_part(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let p = a.nrows();
    let ia = DMatrix::identity(p, p) * (a.trace() / p as f64);
    let rest = a - &ia;
    (ia, rest)
}

/// Scaled-identity target of the streamlined estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TraceTarget {
    /// `I_S`, the pooled SCM's trace.
    #[default]
    PooledTrace,
    /// `I_{S_k}`, the class SCM's trace.
    ClassTrace,
}

/// MSE of `α M̂_k(β) + (1-α) I_{M̂_k(β)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullPolynomial {
    pub c22: f64,
    pub c21: f64,
    pub c20: f64,
    pub c02: f64,
    pub c11: f64,
    pub c10: f64,
    pub c01: f64,
    pub c00: f64,
    /// `‖M_k‖²_F`, divides the MSE into an NMSE.
    pub normalization: f64,
}

impl FullPolynomial {
    pub fn evaluate(&self, alpha: f64, beta: f64) -> f64 {
        let (a, b) = (alpha, beta);
        a * a * (b * b * self.c22 + b * self.c21 + self.c20)
            + b * b * self.c02
            + a * b * self.c11
            + a * self.c10
            + b * self.c01
            + self.c00
    }

    pub fn nmse(&self, alpha: f64, beta: f64) -> f64 {
        self.evaluate(alpha, beta) / self.normalization
    }

    /// Coefficients in the order `C22, C21, C20, C02, C11, C10, C01, C00`.
    pub fn coefficients(&self) -> [f64; 8] {
        [
            self.c22, self.c21, self.c20, self.c02, self.c11, self.c10, self.c01, self.c00,
        ]
    }

    /// Same surface scaled so that it evaluates to the NMSE.
    pub fn normalized(&self) -> Self {
        self.scaled(1.0 / self.normalization)
    }

    pub fn scaled(&self, c: f64) -> Self {
        let [c22, c21, c20, c02, c11, c10, c01, c00] = self.coefficients().map(|v| v * c);
        Self {
            c22,
            c21,
            c20,
            c02,
            c11,
            c10,
            c01,
            c00,
            normalization: self.normalization * c,
        }
    }

    pub fn from_coefficients(c: [f64; 8], normalization: f64) -> Self {
        let [c22, c21, c20, c02, c11, c10, c01, c00] = c;
        Self {
            c22,
            c21,
            c20,
            c02,
            c11,
            c10,
            c01,
            c00,
            normalization,
        }
    }

    pub fn d2_alpha(&self, beta: f64) -> f64 {
        2.0 * (beta * beta * self.c22 + beta * self.c21 + self.c20)
    }

    pub fn d2_beta(&self, alpha: f64) -> f64 {
        2.0 * (alpha * alpha * self.c22 + self.c02)
    }
}

/// MSE of `α M̂_k(β) + (1-α) I_T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamlinedPolynomial {
    pub b22: f64,
    pub b21: f64,
    pub b20: f64,
    pub b11: f64,
    pub b10: f64,
    pub b00: f64,
    pub target: TraceTarget,
    pub normalization: f64,
}

impl StreamlinedPolynomial {
    pub fn evaluate(&self, alpha: f64, beta: f64) -> f64 {
        let (a, b) = (alpha, beta);
        a * a * (b * b * self.b22 + b * self.b21 + self.b20)
            + a * b * self.b11
            + a * self.b10
            + self.b00
    }

    pub fn nmse(&self, alpha: f64, beta: f64) -> f64 {
        self.evaluate(alpha, beta) / self.normalization
    }

    /// Coefficients in the order `B22, B21, B20, B11, B10, B00`.
    pub fn coefficients(&self) -> [f64; 6] {
        [self.b22, self.b21, self.b20, self.b11, self.b10, self.b00]
    }

    pub fn from_coefficients(c: [f64; 6], target: TraceTarget, normalization: f64) -> Self {
        let [b22, b21, b20, b11, b10, b00] = c;
        Self {
            b22,
            b21,
            b20,
            b11,
            b10,
            b00,
            target,
            normalization,
        }
    }
}

/// Either polynomial, tagged for JSON output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum MsePolynomial {
    Full(FullPolynomial),
    Streamlined(StreamlinedPolynomial),
}

impl MsePolynomial {
    pub fn evaluate(&self, alpha: f64, beta: f64) -> f64 {
        match self {
            MsePolynomial::Full(p) => p.evaluate(alpha, beta),
            MsePolynomial::Streamlined(p) => p.evaluate(alpha, beta),
        }
    }

    pub fn nmse(&self, alpha: f64, beta: f64) -> f64 {
        match self {
            MsePolynomial::Full(p) => p.nmse(alpha, beta),
            MsePolynomial::Streamlined(p) => p.nmse(alpha, beta),
        }
    }
}

/// Expectation algebra over class-weight vectors.
struct Gram {
    g: DMatrix<f64>,
    h: DMatrix<f64>,
    /// `⟨M_j, M_k⟩` for the class of interest.
    ip_k: DVector<f64>,
    /// `tr(M_j) tr(M_k) / p`
    tr_k: DVector<f64>,
    pi: DVector<f64>,
    diff: DVector<f64>,
    unit: DVector<f64>,
    norm_k: f64,
}

impl Gram {
    fn new(m: &PopulationMoments, k: usize) -> Result<Self> {
        m.validate()?;
        let kk = m.num_classes();
        if k >= kk {
            return Err(RscmError::Input(format!(
                "class index {k} out of range for {kk} classes"
            )));
        }
        let p = m.p as f64;
        let traces: Vec<f64> = (0..kk).map(|j| m.trace(j)).collect();
        let mut g = m.ip.clone();
        let mut h = DMatrix::from_fn(kk, kk, |i, j| traces[i] * traces[j] / p);
        for j in 0..kk {
            let (es, eis) = m.expected_norms(j);
            g[(j, j)] = es;
            h[(j, j)] = eis;
        }
        let pi = DVector::from_vec(m.weights());
        let mut unit = DVector::zeros(kk);
        unit[k] = 1.0;
        let diff = &unit - &pi;
        Ok(Self {
            g,
            h,
            ip_k: m.ip.column(k).into_owned(),
            tr_k: DVector::from_iterator(kk, traces.iter().map(|t| t * traces[k] / p)),
            pi,
            diff,
            unit,
            norm_k: m.ip[(k, k)],
        })
    }

    fn g(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        a.dot(&(&self.g * b))
    }

    fn h(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        a.dot(&(&self.h * b))
    }

    /// `E⟨Aᴵ, Bᴵ⟩` for `A`, `B` built from weights `a`, `b`.
    fn dev(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.g(a, b) - self.h(a, b)
    }

    fn with_m(&self, a: &DVector<f64>) -> f64 {
        a.dot(&self.ip_k)
    }

    fn identity_with_m(&self, a: &DVector<f64>) -> f64 {
        a.dot(&self.tr_k)
    }
}

/// Coefficients `C_ij` for class `k`.
pub fn coefficients_full(m: &PopulationMoments, k: usize) -> Result<FullPolynomial> {
    let e = Gram::new(m, k)?;
    let (d, pi) = (&e.diff, &e.pi);
    Ok(FullPolynomial {
        c22: e.dev(d, d),
        c21: 2.0 * e.dev(d, pi),
        c20: e.dev(pi, pi),
        c02: e.h(d, d),
        c11: -2.0 * (e.with_m(d) - e.identity_with_m(d)),
        c10: -2.0 * (e.with_m(pi) - e.identity_with_m(pi)),
        c01: 2.0 * (e.h(d, pi) - e.identity_with_m(d)),
        c00: e.h(pi, pi) - 2.0 * e.identity_with_m(pi) + e.norm_k,
        normalization: e.norm_k,
    })
}

/// Coefficients `B_ij` for class `k` and identity target `I_T`.
pub fn coefficients_streamlined(
    m: &PopulationMoments,
    k: usize,
    target: TraceTarget,
) -> Result<StreamlinedPolynomial> {
    let e = Gram::new(m, k)?;
    let (d, pi) = (&e.diff, &e.pi);
    let t = match target {
        TraceTarget::PooledTrace => &e.pi,
        TraceTarget::ClassTrace => &e.unit,
    };
    // E⟨S_i, I_{S_j}⟩ equals the H entry, so mixed terms use h().
    let b20 = e.g(pi, pi) - 2.0 * e.h(pi, t) + e.h(t, t);
    Ok(StreamlinedPolynomial {
        b22: e.g(d, d),
        b21: 2.0 * (e.g(d, pi) - e.h(d, t)),
        b20,
        b11: 2.0 * (e.h(d, t) - e.with_m(d)),
        b10: 2.0 * (e.h(pi, t) - e.with_m(pi) - e.h(t, t) + e.identity_with_m(t)),
        b00: e.h(t, t) - 2.0 * e.identity_with_m(t) + e.norm_k,
        target,
        normalization: e.norm_k,
    })
}

/// Which estimator the Monte Carlo oracle forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleEstimator {
    Full,
    Streamlined(TraceTarget),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimate {
    pub alpha: f64,
    pub beta: f64,
    pub mse: f64,
    pub std_err: f64,
}

/// Monte Carlo average of `‖M̂_k(α,β) - M_k‖²_F` over fresh draws.
///
/// All points share the same draws in each trial. The estimator is formed
/// from the raw matrices, independently of the coefficient algebra.
pub fn mse_oracle(
    pops: &[PopulationSpec],
    k: usize,
    estimator: OracleEstimator,
    points: &[(f64, f64)],
    trials: usize,
    seed: u64,
) -> Result<Vec<OracleEstimate>> {
    if k >= pops.len() {
        return Err(RscmError::Input(format!("class index {k} out of range")));
    }
    if trials < 2 {
        return Err(RscmError::InvalidParameter(
            "the oracle needs at least two trials".into(),
        ));
    }
    let samplers = pops.iter().map(Sampler::new).collect::<Result<Vec<_>>>()?;
    let truth = pops[k].covariance()?;
    let weights = stats::pooled_weights(&pops.iter().map(|p| p.n).collect::<Vec<_>>());
    let p = truth.nrows();
    let eye = DMatrix::<f64>::identity(p, p);

    let errors: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(seed, t as u64);
            let scms: Vec<DMatrix<f64>> = samplers
                .iter()
                .zip(pops)
                .map(|(s, pop)| stats::scm(&s.sample(pop.n, &mut r)))
                .collect::<Result<_>>()?;
            let pooled = scms
                .iter()
                .zip(&weights)
                .fold(DMatrix::zeros(p, p), |acc, (s, w)| acc + s * *w);
            Ok(points
                .iter()
                .map(|&(alpha, beta)| {
                    let partial = &scms[k] * beta + &pooled * (1.0 - beta);
                    let scale = match estimator {
                        OracleEstimator::Full => partial.trace(),
                        OracleEstimator::Streamlined(TraceTarget::PooledTrace) => pooled.trace(),
                        OracleEstimator::Streamlined(TraceTarget::ClassTrace) => scms[k].trace(),
                    } / p as f64;
                    let est = partial * alpha + &eye * ((1.0 - alpha) * scale);
                    (est - &truth).norm_squared()
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let n = trials as f64;
    Ok(points
        .iter()
        .enumerate()
        .map(|(i, &(alpha, beta))| {
            let mean = errors.iter().map(|e| e[i]).sum::<f64>() / n;
            let var = errors.iter().map(|e| (e[i] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            OracleEstimate {
                alpha,
                beta,
                mse: mean,
                std_err: (var / n).sqrt(),
            }
        })
        .collect())
}
