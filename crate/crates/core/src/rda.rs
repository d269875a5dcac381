//! Regularized discriminant analysis.
//!
//! A sample is assigned to the class minimizing
//! `(x - μ_k)ᵀ M_k⁻¹ (x - μ_k) + log|M_k|`. There is no log-prior term.

use log::debug;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Result, RscmError};
use crate::rng;
use crate::shrink::{self, Method};
use crate::stats::{self, SampleStats};

const JITTER_START: f64 = 1e-10;
const JITTER_CAP: f64 = 1e-6;

/// How the class covariances of a model were obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Provenance {
    Method {
        method: Method,
    },
    Fixed {
        alpha: f64,
        beta: f64,
    },
    CrossValidated {
        folds: usize,
        alpha: f64,
        beta: f64,
        cv_error: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassModel {
    pub label: String,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub alpha: f64,
    pub beta: f64,
    /// Diagonal loading that was needed for the factorization, relative to `tr/p`.
    pub jitter: f64,
    pub log_det: f64,
    factor: DMatrix<f64>,
}

impl ClassModel {
    fn new(
        label: String,
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
        alpha: f64,
        beta: f64,
    ) -> Result<Self> {
        let (factor, jitter) =
            factorize(&covariance).ok_or_else(|| RscmError::SingularCovariance {
                class: label.clone(),
            })?;
        let log_det = 2.0 * factor.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(RscmError::SingularCovariance { class: label });
        }
        Ok(Self {
            label,
            mean,
            covariance,
            alpha,
            beta,
            jitter,
            log_det,
            factor,
        })
    }

    /// Lower Cholesky factor of the (possibly jittered) covariance.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn score(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.mean;
        let z = self
            .factor
            .solve_lower_triangular(&d)
            .expect("factor has a positive diagonal");
        z.norm_squared() + self.log_det
    }
}

/// Cholesky factor with escalating diagonal loading `c·tr/p`, `c` from
/// `1e-10` up to `1e-6`.
fn factorize(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some((c.l(), 0.0));
    }
    let scale = m.trace() / m.nrows() as f64;
    if scale <= 0.0 {
        return None;
    }
    let mut c = JITTER_START;
    while c <= JITTER_CAP * (1.0 + 1e-9) {
        let mut loaded = m.clone();
        for i in 0..loaded.nrows() {
            loaded[(i, i)] += c * scale;
        }
        if let Some(ch) = Cholesky::new(loaded) {
            debug!("factorization needed jitter {c:e}");
            return Some((ch.l(), c));
        }
        c *= 10.0;
    }
    None
}

/// Grid cross-validation setup. The same `(α, β)` is used for every class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSpec {
    pub folds: usize,
    pub grid: Vec<(f64, f64)>,
    pub seed: u64,
}

impl CvSpec {
    /// Square grid with `steps` intervals per axis, ordered by `α` then `β`.
    pub fn square_grid(steps: usize) -> Vec<(f64, f64)> {
        let v: Vec<f64> = (0..=steps).map(|i| i as f64 / steps as f64).collect();
        v.iter()
            .flat_map(|&a| v.iter().map(move |&b| (a, b)))
            .collect()
    }

    /// 5 folds over `{0, .25, …, 1}²` or 10 folds over `{0, .125, …, 1}²`.
    pub fn standard(folds: usize, seed: u64) -> Result<Self> {
        let steps = match folds {
            5 => 4,
            10 => 8,
            other => {
                return Err(RscmError::InvalidParameter(format!(
                    "standard grids exist for 5 or 10 folds, not {other}"
                )))
            }
        };
        Ok(Self {
            folds,
            grid: Self::square_grid(steps),
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(RscmError::InvalidParameter("CV grid is empty".into()));
        }
        if self.folds < 2 {
            return Err(RscmError::InvalidParameter(
                "at least 2 folds are required".into(),
            ));
        }
        for &(a, b) in &self.grid {
            if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
                return Err(RscmError::InvalidParameter(format!(
                    "grid point ({a}, {b}) outside [0, 1]²"
                )));
            }
        }
        Ok(())
    }
}

/// Tuning rule used by [`RdaModel::train`].
#[derive(Debug, Clone, PartialEq)]
pub enum TrainSpec {
    Method(Method),
    Fixed { alpha: f64, beta: f64 },
    CrossValidate(CvSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub alpha: f64,
    pub beta: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelFile", try_from = "ModelFile")]
pub struct RdaModel {
    pub classes: Vec<ClassModel>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct ClassFile {
    label: String,
    mean: Vec<f64>,
    #[serde(with = "crate::json::rows")]
    covariance: DMatrix<f64>,
    alpha: f64,
    beta: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    provenance: Provenance,
    classes: Vec<ClassFile>,
}

impl From<RdaModel> for ModelFile {
    fn from(m: RdaModel) -> Self {
        let classes = m
            .classes
            .into_iter()
            .map(|c| ClassFile {
                covariance: c.covariance,
                mean: c.mean.iter().copied().collect(),
                label: c.label,
                alpha: c.alpha,
                beta: c.beta,
            })
            .collect();
        Self {
            provenance: m.provenance,
            classes,
        }
    }
}

impl TryFrom<ModelFile> for RdaModel {
    type Error = RscmError;

    fn try_from(f: ModelFile) -> Result<Self> {
        let classes = f
            .classes
            .into_iter()
            .map(|c| {
                let p = c.mean.len();
                if c.covariance.shape() != (p, p) {
                    return Err(RscmError::DimensionMismatch {
                        expected: p,
                        got: c.covariance.nrows(),
                    });
                }
                ClassModel::new(
                    c.label,
                    DVector::from_vec(c.mean),
                    c.covariance,
                    c.alpha,
                    c.beta,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        RdaModel::from_parts(classes, f.provenance)
    }
}

impl RdaModel {
    fn from_parts(classes: Vec<ClassModel>, provenance: Provenance) -> Result<Self> {
        let p = classes
            .first()
            .ok_or_else(|| RscmError::Input("model has no classes".into()))?
            .mean
            .len();
        if let Some(c) = classes.iter().find(|c| c.mean.len() != p) {
            return Err(RscmError::DimensionMismatch {
                expected: p,
                got: c.mean.len(),
            });
        }
        Ok(Self {
            classes,
            provenance,
        })
    }

    pub fn train(data: &LabeledDataset, spec: &TrainSpec) -> Result<Self> {
        match spec {
            TrainSpec::Method(method) => {
                let st = SampleStats::from_classes(&data.classes)?;
                let est = shrink::estimate_all(&st, *method)?;
                let classes = est
                    .into_iter()
                    .zip(&st.classes)
                    .zip(&data.labels)
                    .map(|((e, c), label)| {
                        ClassModel::new(label.clone(), c.mean.clone(), e.matrix, e.alpha, e.beta)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Self::from_parts(classes, Provenance::Method { method: *method })
            }
            TrainSpec::Fixed { alpha, beta } => {
                let classes = fit_fixed(&data.labels, &data.classes, *alpha, *beta)?;
                Self::from_parts(
                    classes,
                    Provenance::Fixed {
                        alpha: *alpha,
                        beta: *beta,
                    },
                )
            }
            TrainSpec::CrossValidate(cv) => {
                let out = cross_validate(data, cv)?;
                let classes = fit_fixed(&data.labels, &data.classes, out.alpha, out.beta)?;
                Self::from_parts(
                    classes,
                    Provenance::CrossValidated {
                        folds: cv.folds,
                        alpha: out.alpha,
                        beta: out.beta,
                        cv_error: out.error,
                    },
                )
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.classes[0].mean.len()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.classes.iter().map(|c| c.label.as_str()).collect()
    }

    pub fn scores(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(RscmError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.classes.iter().map(|c| c.score(x)).collect())
    }

    /// Index of the class with the smallest score; ties go to the lowest index.
    pub fn predict_index(&self, x: &DVector<f64>) -> Result<usize> {
        Ok(argmin(&self.scores(x)?))
    }

    pub fn predict(&self, x: &DVector<f64>) -> Result<&str> {
        Ok(&self.classes[self.predict_index(x)?].label)
    }

    /// Predicted class indices for the rows of `samples`.
    pub fn predict_rows(&self, samples: &DMatrix<f64>) -> Result<Vec<usize>> {
        samples
            .row_iter()
            .map(|r| self.predict_index(&r.transpose()))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in v.iter().enumerate().skip(1) {
        if s < v[best] {
            best = i;
        }
    }
    best
}

fn fit_fixed(
    labels: &[String],
    classes: &[DMatrix<f64>],
    alpha: f64,
    beta: f64,
) -> Result<Vec<ClassModel>> {
    let fit = FoldFit::new(classes)?;
    labels
        .iter()
        .enumerate()
        .map(|(k, label)| fit.model(k, label.clone(), alpha, beta))
        .collect()
}

/// Class means and SCMs of one training set.
struct FoldFit {
    means: Vec<DVector<f64>>,
    scms: Vec<DMatrix<f64>>,
    pooled: DMatrix<f64>,
}

impl FoldFit {
    fn new(classes: &[DMatrix<f64>]) -> Result<Self> {
        let scms = classes.iter().map(stats::scm).collect::<Result<Vec<_>>>()?;
        let weights = stats::pooled_weights(&classes.iter().map(|c| c.nrows()).collect::<Vec<_>>());
        let p = scms[0].nrows();
        let mut pooled = DMatrix::zeros(p, p);
        for (s, w) in scms.iter().zip(weights) {
            pooled += s * w;
        }
        Ok(Self {
            means: classes.iter().map(stats::sample_mean).collect(),
            scms,
            pooled,
        })
    }

    fn model(&self, k: usize, label: String, alpha: f64, beta: f64) -> Result<ClassModel> {
        let cov = shrink::coupled_rscm(&self.scms[k], &self.pooled, alpha, beta)?;
        ClassModel::new(label, self.means[k].clone(), cov, alpha, beta)
    }
}

/// Stratified fold index of every sample: per class, a seeded shuffle
/// followed by round-robin assignment.
pub fn fold_assignment(class_sizes: &[usize], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if let Some((k, &n)) = class_sizes.iter().enumerate().find(|&(_, &n)| n < folds) {
        return Err(RscmError::Stratification(format!(
            "class {k} has {n} samples, fewer than the {folds} folds"
        )));
    }
    let mut r = rng::stream(seed, 0);
    Ok(class_sizes
        .iter()
        .map(|&n| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut r);
            let mut fold = vec![0; n];
            for (pos, &i) in idx.iter().enumerate() {
                fold[i] = pos % folds;
            }
            fold
        })
        .collect())
}

/// Misclassification counts per grid point for one held-out fold.
fn fold_errors(
    data: &LabeledDataset,
    assignment: &[Vec<usize>],
    fold: usize,
    grid: &[(f64, f64)],
) -> Vec<usize> {
    let split = |keep_fold: bool| -> Vec<DMatrix<f64>> {
        data.classes
            .iter()
            .zip(assignment)
            .map(|(x, a)| {
                let rows: Vec<usize> = (0..x.nrows())
                    .filter(|&i| (a[i] == fold) == keep_fold)
                    .collect();
                x.select_rows(&rows)
            })
            .collect()
    };
    let train = split(false);
    let test = split(true);
    let n_test: usize = test.iter().map(|t| t.nrows()).sum();
    let fit = match FoldFit::new(&train) {
        Ok(f) => f,
        Err(e) => {
            debug!("fold {fold}: training failed ({e})");
            return vec![n_test; grid.len()];
        }
    };
    grid.iter()
        .map(|&(alpha, beta)| {
            let classes: Result<Vec<ClassModel>> = (0..train.len())
                .map(|k| fit.model(k, data.labels[k].clone(), alpha, beta))
                .collect();
            let model = match classes
                .and_then(|c| RdaModel::from_parts(c, Provenance::Fixed { alpha, beta }))
            {
                Ok(m) => m,
                Err(_) => return n_test,
            };
            test.iter()
                .enumerate()
                .map(|(k, t)| {
                    model
                        .predict_rows(t)
                        .map(|pred| pred.iter().filter(|&&p| p != k).count())
                        .unwrap_or(t.nrows())
                })
                .sum()
        })
        .collect()
}

/// Grid point with the lowest cross-validated misclassification rate; ties
/// go to the smaller `α`, then the smaller `β`.
pub fn cross_validate(data: &LabeledDataset, spec: &CvSpec) -> Result<CvOutcome> {
    spec.validate()?;
    let assignment = fold_assignment(&data.class_sizes(), spec.folds, spec.seed)?;
    let per_fold: Vec<Vec<usize>> = (0..spec.folds)
        .into_par_iter()
        .map(|f| fold_errors(data, &assignment, f, &spec.grid))
        .collect();
    let total: usize = data.class_sizes().iter().sum();
    let mut best: Option<(f64, f64, usize)> = None;
    for (i, &(a, b)) in spec.grid.iter().enumerate() {
        let errors: usize = per_fold.iter().map(|f| f[i]).sum();
        let better = match best {
            None => true,
            Some((ba, bb, be)) => errors < be || (errors == be && (a < ba || (a == ba && b < bb))),
        };
        if better {
            best = Some((a, b, errors));
        }
    }
    let (alpha, beta, errors) = best.expect("grid is nonempty");
    Ok(CvOutcome {
        alpha,
        beta,
        error: errors as f64 / total as f64,
    })
}
