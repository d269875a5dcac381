//! Python bindings. Matrices cross the boundary as lists of rows.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

use rscm::data::LabeledDataset;
use rscm::harness::{self, ExperimentConfig, SetupChoice};
use rscm::json::{matrix_from_rows, matrix_to_rows};
use rscm::msepoly::{self, FullPolynomial, StreamlinedPolynomial, TraceTarget};
use rscm::params::{InnerProductMode, PopulationMoments};
use rscm::rda::{self, CvSpec, TrainSpec};
use rscm::shrink::{self, Method};
use rscm::stats::{self, SampleStats};
use rscm::synth::{self, CovStructure, Setup, StructureKind};
use rscm::tuning::{self, FullOptions};
use rscm::RscmError;

fn to_py(e: RscmError) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

type Rows = Vec<Vec<f64>>;

fn matrix(rows: &Rows) -> PyResult<DMatrix<f64>> {
    matrix_from_rows(rows).map_err(to_py)
}

fn matrices(classes: &[Rows]) -> PyResult<Vec<DMatrix<f64>>> {
    classes.iter().map(matrix).collect()
}

fn parse_target(target: &str) -> PyResult<TraceTarget> {
    match target.to_ascii_lowercase().as_str() {
        "pooled" => Ok(TraceTarget::PooledTrace),
        "class" => Ok(TraceTarget::ClassTrace),
        other => Err(PyValueError::new_err(format!(
            "target must be 'pooled' or 'class', got '{other}'"
        ))),
    }
}

/// AR1 or CS correlation matrix.
#[pyfunction]
fn make_covariance(kind: &str, dim: usize, rho: f64) -> PyResult<Rows> {
    let kind = match kind.to_ascii_uppercase().as_str() {
        "AR1" => StructureKind::Ar1,
        "CS" => StructureKind::Cs,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown structure '{other}'"
            )))
        }
    };
    let m = synth::make_covariance(CovStructure { kind, rho, dim }).map_err(to_py)?;
    Ok(matrix_to_rows(&m))
}

/// Unbiased sample covariance of an `n × p` sample.
#[pyfunction]
fn scm(samples: Rows) -> PyResult<Rows> {
    Ok(matrix_to_rows(
        &stats::scm(&matrix(&samples)?).map_err(to_py)?,
    ))
}

#[pyfunction]
fn coupled_rscm(class_scm: Rows, pooled: Rows, alpha: f64, beta: f64) -> PyResult<Rows> {
    let m = shrink::coupled_rscm(&matrix(&class_scm)?, &matrix(&pooled)?, alpha, beta)
        .map_err(to_py)?;
    Ok(matrix_to_rows(&m))
}

#[pyfunction]
#[pyo3(signature = (class_scm, pooled, alpha, beta, target = "pooled"))]
fn streamlined_rscm(
    class_scm: Rows,
    pooled: Rows,
    alpha: f64,
    beta: f64,
    target: &str,
) -> PyResult<Rows> {
    let m = shrink::streamlined_rscm(
        &matrix(&class_scm)?,
        &matrix(&pooled)?,
        alpha,
        beta,
        parse_target(target)?,
    )
    .map_err(to_py)?;
    Ok(matrix_to_rows(&m))
}

/// Regularized covariance of one class.
#[pyclass(name = "ShrinkageEstimate", frozen, get_all)]
struct PyShrinkageEstimate {
    matrix: Rows,
    alpha: f64,
    beta: f64,
    variant: String,
}

#[pymethods]
impl PyShrinkageEstimate {
    fn __repr__(&self) -> String {
        format!(
            "ShrinkageEstimate(variant={}, alpha={:.6}, beta={:.6}, p={})",
            self.variant,
            self.alpha,
            self.beta,
            self.matrix.len()
        )
    }
}

/// Estimates for every class; `classes` is a list of `n_k × p` samples.
#[pyfunction]
#[pyo3(signature = (classes, method = "POLY"))]
fn estimate(classes: Vec<Rows>, method: &str) -> PyResult<Vec<PyShrinkageEstimate>> {
    let method: Method = method.parse().map_err(to_py)?;
    let st = SampleStats::from_classes(&matrices(&classes)?).map_err(to_py)?;
    let est = shrink::estimate_all(&st, method).map_err(to_py)?;
    Ok(est
        .into_iter()
        .map(|e| PyShrinkageEstimate {
            matrix: matrix_to_rows(&e.matrix),
            alpha: e.alpha,
            beta: e.beta,
            variant: format!("{:?}", e.variant),
        })
        .collect())
}

/// MSE of the coupled estimator as a bivariate polynomial.
#[pyclass(name = "FullPolynomial", frozen)]
struct PyFullPolynomial(FullPolynomial);

#[pymethods]
impl PyFullPolynomial {
    /// Ground-truth polynomial of a preset setup (`class_index` is 0-based).
    #[staticmethod]
    #[pyo3(signature = (setup, class_index, p = 200))]
    fn from_setup(setup: &str, class_index: usize, p: usize) -> PyResult<Self> {
        let setup: Setup = setup.parse().map_err(to_py)?;
        let d = harness::dump_surface(setup, class_index, 1.0, p).map_err(to_py)?;
        Ok(Self(d.polynomial))
    }

    /// Plug-in polynomial estimated from samples.
    #[staticmethod]
    fn from_samples(classes: Vec<Rows>, class_index: usize) -> PyResult<Self> {
        let st = SampleStats::from_classes(&matrices(&classes)?).map_err(to_py)?;
        let m = PopulationMoments::estimate(&st, InnerProductMode::Sscm).map_err(to_py)?;
        Ok(Self(
            msepoly::coefficients_full(&m, class_index).map_err(to_py)?,
        ))
    }

    /// `[C22, C21, C20, C02, C11, C10, C01, C00]`
    fn coefficients(&self) -> Vec<f64> {
        self.0.coefficients().to_vec()
    }

    #[getter]
    fn normalization(&self) -> f64 {
        self.0.normalization
    }

    fn evaluate(&self, alpha: f64, beta: f64) -> f64 {
        self.0.evaluate(alpha, beta)
    }

    fn nmse(&self, alpha: f64, beta: f64) -> f64 {
        self.0.nmse(alpha, beta)
    }

    /// `(alpha, beta, mse)` minimizing the polynomial over the unit square.
    fn optimize(&self) -> PyResult<(f64, f64, f64)> {
        let r = tuning::optimize_full(&self.0, FullOptions::default()).map_err(to_py)?;
        Ok((r.alpha, r.beta, r.mse))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

/// MSE of the estimator with a fixed trace target.
#[pyclass(name = "StreamlinedPolynomial", frozen)]
struct PyStreamlinedPolynomial(StreamlinedPolynomial);

#[pymethods]
impl PyStreamlinedPolynomial {
    #[staticmethod]
    #[pyo3(signature = (classes, class_index, target = "pooled"))]
    fn from_samples(classes: Vec<Rows>, class_index: usize, target: &str) -> PyResult<Self> {
        let st = SampleStats::from_classes(&matrices(&classes)?).map_err(to_py)?;
        let m = PopulationMoments::estimate(&st, InnerProductMode::Sscm).map_err(to_py)?;
        let poly = msepoly::coefficients_streamlined(&m, class_index, parse_target(target)?)
            .map_err(to_py)?;
        Ok(Self(poly))
    }

    /// `[B22, B21, B20, B11, B10, B00]`
    fn coefficients(&self) -> Vec<f64> {
        self.0.coefficients().to_vec()
    }

    fn evaluate(&self, alpha: f64, beta: f64) -> f64 {
        self.0.evaluate(alpha, beta)
    }

    fn optimize(&self) -> PyResult<(f64, f64, f64)> {
        let r = tuning::optimize_streamlined(&self.0).map_err(to_py)?;
        Ok((r.alpha, r.beta, r.mse))
    }
}

/// Regularized discriminant analysis classifier.
#[pyclass(name = "RdaModel", frozen)]
struct PyRdaModel(rda::RdaModel);

#[pymethods]
impl PyRdaModel {
    /// Train with a shrinkage method name (e.g. "POLY-Ave") or "5-CV" / "10-CV".
    #[staticmethod]
    #[pyo3(signature = (classes, labels = None, method = "POLY-Ave", seed = 0))]
    fn train(
        classes: Vec<Rows>,
        labels: Option<Vec<String>>,
        method: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let labels = labels.unwrap_or_else(|| (0..classes.len()).map(|k| k.to_string()).collect());
        let data = LabeledDataset::from_classes(labels, matrices(&classes)?).map_err(to_py)?;
        let spec = match method.parse::<harness::Classifier>().map_err(to_py)? {
            harness::Classifier::Shrink(m) => TrainSpec::Method(m),
            harness::Classifier::GridCv { folds } => {
                TrainSpec::CrossValidate(CvSpec::standard(folds, seed).map_err(to_py)?)
            }
        };
        Ok(Self(rda::RdaModel::train(&data, &spec).map_err(to_py)?))
    }

    #[staticmethod]
    fn from_json(json: &str) -> PyResult<Self> {
        Ok(Self(rda::RdaModel::from_json(json).map_err(to_py)?))
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(to_py)
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.0.labels().into_iter().map(String::from).collect()
    }

    fn scores(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.scores(&DVector::from_vec(x)).map_err(to_py)
    }

    fn predict(&self, x: Vec<f64>) -> PyResult<String> {
        self.0
            .predict(&DVector::from_vec(x))
            .map(String::from)
            .map_err(to_py)
    }

    /// Predicted labels for the rows of `samples`.
    fn predict_rows(&self, samples: Rows) -> PyResult<Vec<String>> {
        let idx = self.0.predict_rows(&matrix(&samples)?).map_err(to_py)?;
        Ok(idx
            .into_iter()
            .map(|i| self.0.classes[i].label.clone())
            .collect())
    }
}

/// Monte Carlo NMSE table as a list of dicts.
#[pyfunction]
#[pyo3(signature = (setup, p = 200, trials = 400, seed = 0, methods = vec!["SCM".to_string(), "POOL".to_string(), "POLY".to_string()]))]
fn simulate(
    py: Python<'_>,
    setup: &str,
    p: usize,
    trials: usize,
    seed: u64,
    methods: Vec<String>,
) -> PyResult<Vec<Py<PyAny>>> {
    let methods = methods
        .iter()
        .map(|m| m.parse())
        .collect::<Result<Vec<Method>, _>>()
        .map_err(to_py)?;
    let cfg = ExperimentConfig {
        setup: SetupChoice::Preset(setup.parse().map_err(to_py)?),
        p,
        trials,
        seed,
        methods,
        wall_time: false,
    };
    let rows = py.detach(|| harness::run_simulation(&cfg)).map_err(to_py)?;
    rows.into_iter()
        .map(|r| {
            let d = pyo3::types::PyDict::new(py);
            d.set_item("setup", r.setup)?;
            d.set_item("class", r.class.to_string())?;
            d.set_item("method", r.method.to_string())?;
            d.set_item("nmse_mean", r.nmse_mean)?;
            d.set_item("nmse_std", r.nmse_std)?;
            Ok(d.into_any().unbind())
        })
        .collect()
}

#[pymodule(name = "rscm")]
fn rscm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(make_covariance, m)?)?;
    m.add_function(wrap_pyfunction!(scm, m)?)?;
    m.add_function(wrap_pyfunction!(coupled_rscm, m)?)?;
    m.add_function(wrap_pyfunction!(streamlined_rscm, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_class::<PyShrinkageEstimate>()?;
    m.add_class::<PyFullPolynomial>()?;
    m.add_class::<PyStreamlinedPolynomial>()?;
    m.add_class::<PyRdaModel>()?;
    Ok(())
}
