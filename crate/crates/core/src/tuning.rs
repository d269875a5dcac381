//! Minimization of the MSE polynomials over `(α, β) ∈ [0, 1]²`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RscmError};
use crate::msepoly::{FullPolynomial, StreamlinedPolynomial};

pub const DEFAULT_GRID_STEP: f64 = 0.05;
const REFINE_TOL: f64 = 1e-10;
const REFINE_MAX_ITER: usize = 500;
/// Relative size below which a denominator counts as zero.
const DEGENERATE_RTOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TuningMethod {
    Grid,
    GridRefined,
    Analytic,
    Averaged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub alpha: f64,
    pub beta: f64,
    pub mse: f64,
    pub method: TuningMethod,
    pub iterations: usize,
}

/// `[c]_a^b = max(a, min(b, c))`
pub fn clamp(c: f64, a: f64, b: f64) -> f64 {
    a.max(b.min(c))
}

fn full_scale(poly: &FullPolynomial) -> f64 {
    poly.coefficients()
        .iter()
        .fold(0.0f64, |m, c| m.max(c.abs()))
}

fn check_denominator(den: f64, scale: f64, what: &str) -> Result<()> {
    if !den.is_finite() || den <= DEGENERATE_RTOL * scale {
        return Err(RscmError::DegeneratePolynomial(format!(
            "{what} denominator {den:e} is not positive"
        )));
    }
    Ok(())
}

/// Minimizer over `α ∈ [0, 1]` for fixed `β`.
pub fn alpha_given_beta(poly: &FullPolynomial, beta: f64) -> Result<f64> {
    let den = beta * beta * poly.c22 + beta * poly.c21 + poly.c20;
    check_denominator(den, full_scale(poly), "alpha update")?;
    Ok(clamp(-0.5 * (beta * poly.c11 + poly.c10) / den, 0.0, 1.0))
}

/// Minimizer over `β ∈ [0, 1]` for fixed `α`.
pub fn beta_given_alpha(poly: &FullPolynomial, alpha: f64) -> Result<f64> {
    let den = alpha * alpha * poly.c22 + poly.c02;
    check_denominator(den, full_scale(poly), "beta update")?;
    let num = alpha * alpha * poly.c21 + alpha * poly.c11 + poly.c01;
    Ok(clamp(-0.5 * num / den, 0.0, 1.0))
}

/// Points `0, step, 2·step, …, 1`.
pub fn grid_points(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(RscmError::InvalidParameter(format!(
            "grid step {step} not in (0, 1]"
        )));
    }
    let n = (1.0 / step).round() as usize;
    if ((n as f64) * step - 1.0).abs() > 1e-9 {
        return Err(RscmError::InvalidParameter(format!(
            "grid step {step} does not divide 1"
        )));
    }
    Ok((0..=n).map(|i| i as f64 / n as f64).collect())
}

/// Grid minimum with ties resolved toward smaller `α`, then smaller `β`.
pub fn grid_minimum(f: impl Fn(f64, f64) -> f64, values: &[f64]) -> (f64, f64, f64) {
    let mut best = (0.0, 0.0, f64::INFINITY);
    for &a in values {
        for &b in values {
            let v = f(a, b);
            if v < best.2 {
                best = (a, b, v);
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullOptions {
    pub grid_step: f64,
    pub refine: bool,
}

impl Default for FullOptions {
    fn default() -> Self {
        Self {
            grid_step: DEFAULT_GRID_STEP,
            refine: true,
        }
    }
}

/// Alternating refinement from `(alpha, beta)`; returns the final point,
/// its value, the iteration count and the value after each iteration.
pub fn alternating_refinement(
    poly: &FullPolynomial,
    mut alpha: f64,
    mut beta: f64,
) -> (f64, f64, usize, Vec<f64>) {
    let mut trace = Vec::new();
    let mut iterations = 0;
    while iterations < REFINE_MAX_ITER {
        iterations += 1;
        // A degenerate update means the surface is flat in that coordinate.
        let next_alpha = alpha_given_beta(poly, beta).unwrap_or(alpha);
        let next_beta = beta_given_alpha(poly, next_alpha).unwrap_or(beta);
        let moved = (next_alpha - alpha).abs().max((next_beta - beta).abs());
        alpha = next_alpha;
        beta = next_beta;
        trace.push(poly.evaluate(alpha, beta));
        if moved < REFINE_TOL {
            break;
        }
    }
    (alpha, beta, iterations, trace)
}

/// Grid search, then alternating closed-form refinement from the best grid point.
pub fn optimize_full(poly: &FullPolynomial, opts: FullOptions) -> Result<TuningResult> {
    if !poly.coefficients().iter().all(|c| c.is_finite()) {
        return Err(RscmError::DegeneratePolynomial(
            "non-finite coefficients".into(),
        ));
    }
    let values = grid_points(opts.grid_step)?;
    let (ga, gb, gv) = grid_minimum(|a, b| poly.evaluate(a, b), &values);
    let grid = TuningResult {
        alpha: ga,
        beta: gb,
        mse: gv,
        method: TuningMethod::Grid,
        iterations: 0,
    };
    if !opts.refine {
        return Ok(grid);
    }
    let (alpha, beta, iterations, _) = alternating_refinement(poly, ga, gb);
    let mse = poly.evaluate(alpha, beta);
    if mse > gv {
        return Ok(TuningResult { iterations, ..grid });
    }
    Ok(TuningResult {
        alpha,
        beta,
        mse,
        method: TuningMethod::GridRefined,
        iterations,
    })
}

fn ratio(num: f64, den: f64, scale: f64) -> Option<f64> {
    (den.abs() > DEGENERATE_RTOL * scale && den.is_finite()).then(|| num / den)
}

/// Closed-form minimizer of the streamlined polynomial.
///
/// The interior critical point is used when it lies in `(0, 1)²`; the four
/// edge minimizers are always considered as well and the smallest value
/// wins, so the result is the global minimum over the box.
pub fn optimize_streamlined(poly: &StreamlinedPolynomial) -> Result<TuningResult> {
    let c = poly.coefficients();
    if !c.iter().all(|v| v.is_finite()) {
        return Err(RscmError::DegeneratePolynomial(
            "non-finite coefficients".into(),
        ));
    }
    let scale = c
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let StreamlinedPolynomial {
        b22,
        b21,
        b20,
        b11,
        b10,
        ..
    } = *poly;

    let mut candidates: Vec<(f64, f64)> = Vec::with_capacity(5);
    let num_a = 2.0 * b10 * b22 - b11 * b21;
    if let (Some(a), Some(b)) = (
        ratio(num_a, b21 * b21 - 4.0 * b20 * b22, scale * scale),
        ratio(2.0 * b11 * b20 - b10 * b21, num_a, scale * scale),
    ) {
        if a > 0.0 && a < 1.0 && b > 0.0 && b < 1.0 {
            candidates.push((a, b));
        }
    }
    // i) β = 0
    if let Some(a) = ratio(-0.5 * b10, b20, scale) {
        candidates.push((clamp(a, 0.0, 1.0), 0.0));
    }
    // ii) β = 1
    if let Some(a) = ratio(-0.5 * (b10 + b11), b22 + b21 + b20, scale) {
        candidates.push((clamp(a, 0.0, 1.0), 1.0));
    }
    // iii) α = 1; a flat β direction keeps β = 0
    let b = ratio(-0.5 * (b21 + b11), b22, scale).unwrap_or(0.0);
    candidates.push((1.0, clamp(b, 0.0, 1.0)));
    // iv) α = 0, value independent of β
    candidates.push((0.0, 0.0));

    let (alpha, beta, mse) = candidates
        .into_iter()
        .map(|(a, b)| (a, b, poly.evaluate(a, b)))
        .fold((0.0, 0.0, f64::INFINITY), |best, cand| {
            if cand.2 < best.2 {
                cand
            } else {
                best
            }
        });
    if !mse.is_finite() {
        return Err(RscmError::DegeneratePolynomial(
            "no finite candidate".into(),
        ));
    }
    Ok(TuningResult {
        alpha,
        beta,
        mse,
        method: TuningMethod::Analytic,
        iterations: 0,
    })
}

/// Common `(ᾱ, β̄)` as the arithmetic means over classes.
pub fn average_tuning(results: &[TuningResult]) -> Result<(f64, f64)> {
    if results.is_empty() {
        return Err(RscmError::Input("nothing to average".into()));
    }
    let k = results.len() as f64;
    let alpha = results.iter().map(|r| r.alpha).sum::<f64>() / k;
    let beta = results.iter().map(|r| r.beta).sum::<f64>() / k;
    Ok((alpha, beta))
}
