//! Per-class and pooled sample statistics.
//!
//! Samples are `n × p` matrices, one row per observation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, RscmError};

const WEISZFELD_TOL: f64 = 1e-8;
const WEISZFELD_MAX_ITER: usize = 1000;
const COINCIDENCE_EPS: f64 = 1e-14;
const PERTURBATION: f64 = 1e-10;

pub fn sample_mean(samples: &DMatrix<f64>) -> DVector<f64> {
    samples.row_mean().transpose()
}

fn centered(samples: &DMatrix<f64>, center: &DVector<f64>) -> DMatrix<f64> {
    let mut x = samples.clone();
    for mut row in x.row_iter_mut() {
        row -= center.transpose();
    }
    x
}

/// Unbiased sample covariance matrix (divisor `n - 1`).
pub fn scm(samples: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = samples.nrows();
    if n < 2 {
        return Err(RscmError::InsufficientSamples { needed: 2, got: n });
    }
    let xc = centered(samples, &sample_mean(samples));
    let mut s = xc.tr_mul(&xc) / (n as f64 - 1.0);
    symmetrize(&mut s);
    Ok(s)
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Weights `π_k = n_k / Σ n_j`.
pub fn pooled_weights(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    counts.iter().map(|&n| n as f64 / total as f64).collect()
}

/// `S = Σ π_k S_k` with weights from the class sample counts.
pub fn pooled_scm(classes: &[ClassSampleStats]) -> Result<DMatrix<f64>> {
    let first = classes
        .first()
        .ok_or_else(|| RscmError::Input("pooling requires at least one class".into()))?;
    let p = first.dim();
    let weights = pooled_weights(&classes.iter().map(|c| c.n).collect::<Vec<_>>());
    let mut pooled = DMatrix::zeros(p, p);
    for (c, w) in classes.iter().zip(weights) {
        if c.dim() != p {
            return Err(RscmError::DimensionMismatch {
                expected: p,
                got: c.dim(),
            });
        }
        pooled += &c.scm * w;
    }
    Ok(pooled)
}

fn coordinate_median(samples: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        samples.ncols(),
        samples.column_iter().map(|col| {
            let mut v: Vec<f64> = col.iter().copied().collect();
            v.sort_by(|a, b| a.total_cmp(b));
            let m = v.len() / 2;
            if v.len() % 2 == 1 {
                v[m]
            } else {
                0.5 * (v[m - 1] + v[m])
            }
        }),
    )
}

/// Sum of Euclidean distances from `center` to the rows.
pub fn spatial_median_objective(samples: &DMatrix<f64>, center: &DVector<f64>) -> f64 {
    samples
        .row_iter()
        .map(|r| (r.transpose() - center).norm())
        .sum()
}

/// Geometric (spatial) median by Weiszfeld iteration.
///
/// Starts at the coordinate-wise median and stops when an update moves less
/// than `1e-8` or after 1000 iterations. When the iterate sits on a sample,
/// that sample is returned if it satisfies the optimality condition
/// `‖Σ_{others} u_i‖ ≤ multiplicity`; otherwise the iterate is nudged by
/// `1e-10` along the descent direction of the remaining terms.
pub fn spatial_median(samples: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = samples.nrows();
    if n == 0 {
        return Err(RscmError::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut mu = coordinate_median(samples);
    if n == 1 {
        return Ok(mu);
    }
    let p = samples.ncols();
    for _ in 0..WEISZFELD_MAX_ITER {
        let mut num = DVector::zeros(p);
        let mut den = 0.0;
        let mut pull = DVector::zeros(p);
        let mut coincident = 0usize;
        for row in samples.row_iter() {
            let diff = row.transpose() - &mu;
            let d = diff.norm();
            if d < COINCIDENCE_EPS {
                coincident += 1;
                continue;
            }
            num += row.transpose() / d;
            den += 1.0 / d;
            pull += diff / d;
        }
        if den == 0.0 {
            // every sample coincides with mu
            return Ok(mu);
        }
        if coincident > 0 {
            let pull_norm = pull.norm();
            if pull_norm <= coincident as f64 {
                return Ok(mu);
            }
            mu += pull * (PERTURBATION / pull_norm);
            continue;
        }
        let next = num / den;
        let step = (&next - &mu).norm();
        mu = next;
        if step < WEISZFELD_TOL {
            break;
        }
    }
    Ok(mu)
}

/// Spatial sign covariance matrix about `center`.
///
/// Samples that coincide with the center are skipped and the divisor is the
/// number of retained samples, so the trace stays 1. Returns the matrix and
/// the retained count.
pub fn sscm(samples: &DMatrix<f64>, center: &DVector<f64>) -> Result<(DMatrix<f64>, usize)> {
    let p = samples.ncols();
    if center.len() != p {
        return Err(RscmError::DimensionMismatch {
            expected: p,
            got: center.len(),
        });
    }
    let mut signs = centered(samples, center);
    let mut kept = Vec::with_capacity(samples.nrows());
    for (i, mut row) in signs.row_iter_mut().enumerate() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
            kept.push(i);
        }
    }
    if kept.is_empty() {
        return Err(RscmError::Estimation(
            "every sample coincides with the SSCM center".into(),
        ));
    }
    let signs = if kept.len() == signs.nrows() {
        signs
    } else {
        signs.select_rows(&kept)
    };
    let mut s = signs.tr_mul(&signs) / kept.len() as f64;
    symmetrize(&mut s);
    Ok((s, kept.len()))
}

/// Sufficient statistics of one class.
#[derive(Debug, Clone)]
pub struct ClassSampleStats {
    pub n: usize,
    pub pi: f64,
    pub mean: DVector<f64>,
    pub scm: DMatrix<f64>,
    pub sscm: DMatrix<f64>,
    pub spatial_median: DVector<f64>,
    /// Per-coordinate central moments about the sample mean, divisor `n`.
    pub m2: DVector<f64>,
    pub m4: DVector<f64>,
}

impl ClassSampleStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Second and fourth central marginal moments with divisor `n`.
pub fn marginal_moments(samples: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = samples.nrows() as f64;
    let mean = sample_mean(samples);
    let p = samples.ncols();
    let mut m2 = DVector::zeros(p);
    let mut m4 = DVector::zeros(p);
    for (j, col) in samples.column_iter().enumerate() {
        let (s2, s4) = col.iter().fold((0.0, 0.0), |(a, b), &v| {
            let d2 = (v - mean[j]).powi(2);
            (a + d2, b + d2 * d2)
        });
        m2[j] = s2 / n;
        m4[j] = s4 / n;
    }
    (m2, m4)
}

/// Statistics for all classes plus the pooled SCM.
#[derive(Debug, Clone)]
pub struct SampleStats {
    pub classes: Vec<ClassSampleStats>,
    pub pooled: DMatrix<f64>,
}

impl SampleStats {
    pub fn from_classes(samples: &[DMatrix<f64>]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| RscmError::Input("at least one class is required".into()))?;
        let p = first.ncols();
        let weights = pooled_weights(&samples.iter().map(|s| s.nrows()).collect::<Vec<_>>());
        let classes = samples
            .iter()
            .zip(weights)
            .map(|(x, pi)| {
                if x.ncols() != p {
                    return Err(RscmError::DimensionMismatch {
                        expected: p,
                        got: x.ncols(),
                    });
                }
                let scm = scm(x)?;
                let median = spatial_median(x)?;
                let (sscm, _) = sscm(x, &median)?;
                let (m2, m4) = marginal_moments(x);
                Ok(ClassSampleStats {
                    n: x.nrows(),
                    pi,
                    mean: sample_mean(x),
                    scm,
                    sscm,
                    spatial_median: median,
                    m2,
                    m4,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let pooled = pooled_scm(&classes)?;
        Ok(Self { classes, pooled })
    }

    pub fn dim(&self) -> usize {
        self.pooled.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }
}
