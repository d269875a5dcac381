//! Experiment runners: NMSE simulations, classification benchmarks,
//! theoretical surface dumps and one-shot estimation reports.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use log::info;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Result, RscmError};
use crate::msepoly::{self, FullPolynomial};
use crate::params::{InnerProductMode, PopulationMoments};
use crate::rda::{CvSpec, RdaModel, TrainSpec};
use crate::rng::{self, EXPERIMENT_STREAM};
use crate::shrink::{self, Method, Variant};
use crate::stats::SampleStats;
use crate::synth::{
    self, CovStructure, CovarianceSpec, PopulationSpec, Sampler, Setup, StructureKind,
};
use crate::tuning::{self, FullOptions, TuningResult};

pub const SIMULATION_CSV_VERSION: &str = "# rscm simulate v1";
pub const CLASSIFICATION_CSV_VERSION: &str = "# rscm classify v1";
pub const SURFACE_CSV_VERSION: &str = "# rscm surface v1";

pub const DESK_TRIALS: usize = 400;
pub const FULL_TRIALS: usize = 4000;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum CovarianceFile {
    Matrix(Vec<Vec<f64>>),
    Structured { structure: StructureKind, rho: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PopulationFile {
    #[serde(default)]
    mean: Option<Vec<f64>>,
    covariance: CovarianceFile,
    /// Degrees of freedom of the t distribution; absent means Gaussian.
    #[serde(default)]
    dof: Option<f64>,
    n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SetupFile {
    #[serde(default)]
    name: Option<String>,
    populations: Vec<PopulationFile>,
}

/// Populations read from a JSON file. Structured covariances take their
/// dimension from `p`; explicit matrices are row-major arrays.
pub fn load_custom_setup(
    path: impl AsRef<Path>,
    p: usize,
) -> Result<(String, Vec<PopulationSpec>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_custom_setup(
        &text,
        p,
        &path
            .file_stem()
            .map_or("custom".into(), |s| s.to_string_lossy().into_owned()),
    )
}

pub fn parse_custom_setup(
    json: &str,
    p: usize,
    default_name: &str,
) -> Result<(String, Vec<PopulationSpec>)> {
    let file: SetupFile = serde_json::from_str(json)?;
    if file.populations.is_empty() {
        return Err(RscmError::Input("custom setup has no populations".into()));
    }
    let pops = file
        .populations
        .into_iter()
        .map(|pf| {
            let cov = match pf.covariance {
                CovarianceFile::Matrix(rows) => {
                    CovarianceSpec::Explicit(crate::json::matrix_from_rows(&rows)?)
                }
                CovarianceFile::Structured { structure, rho } => {
                    CovarianceSpec::Structured(CovStructure {
                        kind: structure,
                        rho,
                        dim: p,
                    })
                }
            };
            let dim = match &cov {
                CovarianceSpec::Explicit(m) => m.nrows(),
                CovarianceSpec::Structured(s) => s.dim,
            };
            let mean = pf
                .mean
                .map(DVector::from_vec)
                .unwrap_or_else(|| DVector::zeros(dim));
            PopulationSpec::new(mean, cov, pf.dof.unwrap_or(f64::INFINITY), pf.n)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((file.name.unwrap_or_else(|| default_name.to_string()), pops))
}

#[derive(Debug, Clone)]
pub enum SetupChoice {
    Preset(Setup),
    Custom {
        name: String,
        populations: Vec<PopulationSpec>,
    },
}

impl SetupChoice {
    pub fn name(&self) -> String {
        match self {
            SetupChoice::Preset(s) => s.to_string(),
            SetupChoice::Custom { name, .. } => name.clone(),
        }
    }

    /// Fixed populations; `None` for the randomized setup.
    fn fixed_populations(&self, p: usize, seed: u64) -> Result<Option<Vec<PopulationSpec>>> {
        match self {
            SetupChoice::Preset(Setup::D) => Ok(None),
            SetupChoice::Preset(s) => Ok(Some(
                s.populations(p, &mut rng::stream(seed, EXPERIMENT_STREAM))?,
            )),
            SetupChoice::Custom { populations, .. } => Ok(Some(populations.clone())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub setup: SetupChoice,
    pub p: usize,
    pub trials: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    /// Also report mean wall time per trial. Off by default since timings
    /// make output non-reproducible.
    pub wall_time: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(RscmError::InvalidParameter(
                "trials must be at least 1".into(),
            ));
        }
        if self.methods.is_empty() {
            return Err(RscmError::InvalidParameter(
                "at least one method is required".into(),
            ));
        }
        if self.p == 0 {
            return Err(RscmError::InvalidParameter(
                "dimension must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Class index (1-based) or the sum over classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassIndex {
    Class(usize),
    Sum,
}

impl fmt::Display for ClassIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassIndex::Class(k) => write!(f, "{k}"),
            ClassIndex::Sum => f.write_str("sum"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub setup: String,
    pub class: ClassIndex,
    pub method: Method,
    pub nmse_mean: f64,
    pub nmse_std: f64,
    pub wall_time: Option<f64>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn nmse(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    (estimate - truth).norm_squared() / truth.norm_squared()
}

struct TrialOutcome {
    /// `[method][class]`
    nmse: Vec<Vec<f64>>,
    seconds: Vec<f64>,
}

fn run_trial(
    cfg: &ExperimentConfig,
    fixed: Option<&[PopulationSpec]>,
    samplers: Option<&[(Sampler, DMatrix<f64>)]>,
    t: usize,
) -> Result<TrialOutcome> {
    let mut r = rng::stream(cfg.seed, t as u64);
    let drawn;
    let (pops, truths): (&[PopulationSpec], Vec<DMatrix<f64>>) = match fixed {
        Some(p) => (
            p,
            samplers
                .expect("samplers built for fixed populations")
                .iter()
                .map(|s| s.1.clone())
                .collect(),
        ),
        None => {
            drawn = Setup::draw_randomized(cfg.p, &mut r)?;
            let truths = drawn
                .iter()
                .map(|p| p.covariance())
                .collect::<Result<Vec<_>>>()?;
            (&drawn, truths)
        }
    };
    let samples: Vec<DMatrix<f64>> = match samplers {
        Some(s) if fixed.is_some() => s
            .iter()
            .zip(pops)
            .map(|((sm, _), p)| sm.sample(p.n, &mut r))
            .collect(),
        _ => pops
            .iter()
            .map(|p| synth::sample_population(p, &mut r))
            .collect::<Result<_>>()?,
    };

    let start = Instant::now();
    let stats = SampleStats::from_classes(&samples)?;
    let needs_moments = cfg
        .methods
        .iter()
        .any(|m| !matches!(m, Method::Scm | Method::Pool));
    let moments = if needs_moments {
        Some(PopulationMoments::estimate(&stats, InnerProductMode::Sscm)?)
    } else {
        None
    };
    let shared = start.elapsed().as_secs_f64();

    let mut nmse_rows = Vec::with_capacity(cfg.methods.len());
    let mut seconds = Vec::with_capacity(cfg.methods.len());
    for &m in &cfg.methods {
        let start = Instant::now();
        let est = shrink::estimate_with_moments(&stats, moments.as_ref(), m)?;
        seconds.push(start.elapsed().as_secs_f64() + shared);
        nmse_rows.push(
            est.iter()
                .zip(&truths)
                .map(|(e, m)| nmse(&e.matrix, m))
                .collect(),
        );
    }
    Ok(TrialOutcome {
        nmse: nmse_rows,
        seconds,
    })
}

/// Monte Carlo NMSE of every method. Trial `t` uses its own random stream,
/// so the output does not depend on the number of threads.
pub fn run_simulation(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let fixed = cfg.setup.fixed_populations(cfg.p, cfg.seed)?;
    let samplers = fixed
        .as_ref()
        .map(|pops| {
            pops.iter()
                .map(|p| Ok((Sampler::new(p)?, p.covariance()?)))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    info!(
        "simulating setup {} with {} trials",
        cfg.setup.name(),
        cfg.trials
    );
    let outcomes = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, fixed.as_deref(), samplers.as_deref(), t))
        .collect::<Result<Vec<_>>>()?;

    let k = outcomes[0].nmse[0].len();
    let mut order: Vec<usize> = (0..cfg.methods.len()).collect();
    order.sort_by_key(|&i| cfg.methods[i]);
    order.dedup_by_key(|i| cfg.methods[*i]);
    let mut rows = Vec::new();
    for i in order {
        let wall = cfg
            .wall_time
            .then(|| outcomes.iter().map(|o| o.seconds[i]).sum::<f64>() / cfg.trials as f64);
        let mut push = |class, values: Vec<f64>| {
            let (nmse_mean, nmse_std) = mean_std(&values);
            rows.push(ResultRow {
                setup: cfg.setup.name(),
                class,
                method: cfg.methods[i],
                nmse_mean,
                nmse_std,
                wall_time: wall,
            });
        };
        for c in 0..k {
            push(
                ClassIndex::Class(c + 1),
                outcomes.iter().map(|o| o.nmse[i][c]).collect(),
            );
        }
        push(
            ClassIndex::Sum,
            outcomes.iter().map(|o| o.nmse[i].iter().sum()).collect(),
        );
    }
    Ok(rows)
}

pub fn write_simulation_csv<W: Write>(rows: &[ResultRow], mut out: W) -> Result<()> {
    writeln!(out, "{SIMULATION_CSV_VERSION}")?;
    let with_time = rows.iter().any(|r| r.wall_time.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["setup", "class", "method", "nmse_mean", "nmse_std"];
    if with_time {
        header.push("wall_time");
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.setup.clone(),
            r.class.to_string(),
            r.method.to_string(),
            r.nmse_mean.to_string(),
            r.nmse_std.to_string(),
        ];
        if with_time {
            rec.push(r.wall_time.map_or(String::new(), |t| t.to_string()));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// A classifier choice in a benchmark: a shrinkage method or grid CV.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classifier {
    Shrink(Method),
    GridCv { folds: usize },
}

impl fmt::Display for Classifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Classifier::Shrink(m) => write!(f, "{m}"),
            Classifier::GridCv { folds } => write!(f, "{folds}-CV"),
        }
    }
}

impl FromStr for Classifier {
    type Err = RscmError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_uppercase();
        if let Some(f) = t.strip_suffix("-CV").or_else(|| t.strip_prefix("CV")) {
            let folds: usize = f
                .trim_matches('-')
                .parse()
                .map_err(|_| RscmError::Input(format!("bad CV spec '{s}'")))?;
            return match folds {
                5 | 10 => Ok(Classifier::GridCv { folds }),
                _ => Err(RscmError::Input(format!(
                    "grid CV supports 5 or 10 folds, got {folds}"
                ))),
            };
        }
        Ok(Classifier::Shrink(s.parse()?))
    }
}

/// Two-class t-distributed task used when no data file is given.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub p: usize,
    pub n_per_class: usize,
    pub dof: f64,
    /// Mean of class 2 is `shift · 1`; class 1 is centered.
    pub shift: f64,
    pub structures: [CovStructure; 2],
}

impl Default for SyntheticTask {
    fn default() -> Self {
        let p = 20;
        Self {
            p,
            n_per_class: 250,
            dof: 8.0,
            shift: 0.25,
            structures: [CovStructure::ar1(p, 0.6), CovStructure::cs(p, 0.2)],
        }
    }
}

impl SyntheticTask {
    pub fn generate(&self, seed: u64) -> Result<LabeledDataset> {
        let mut r = rng::stream(seed, EXPERIMENT_STREAM);
        let classes = self
            .structures
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let mean = DVector::from_element(self.p, self.shift * k as f64);
                let spec = PopulationSpec::new(
                    mean,
                    CovarianceSpec::Structured(*s),
                    self.dof,
                    self.n_per_class,
                )?;
                synth::sample_population(&spec, &mut r)
            })
            .collect::<Result<Vec<_>>>()?;
        LabeledDataset::from_classes(vec!["1".into(), "2".into()], classes)
    }
}

#[derive(Debug, Clone)]
pub struct ClassificationConfig {
    pub classifiers: Vec<Classifier>,
    /// Fraction of each class used for training.
    pub split: f64,
    pub reps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRow {
    pub method: String,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub median_wall_time: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub rows: Vec<ClassificationRow>,
    /// `[rep][classifier]`
    pub accuracies: Vec<Vec<f64>>,
    pub wall_times: Vec<Vec<f64>>,
    /// Training-row indices per repetition and class.
    pub splits: Vec<Vec<Vec<usize>>>,
}

/// Stratified random split: per class, `round(split · n_k)` training rows
/// clamped to `[2, n_k - 1]`.
pub fn stratified_split<R: rand::Rng + ?Sized>(
    sizes: &[usize],
    split: f64,
    r: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if !(split > 0.0 && split < 1.0) {
        return Err(RscmError::InvalidParameter(format!(
            "split {split} must lie in (0, 1)"
        )));
    }
    sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            if n < 3 {
                return Err(RscmError::Stratification(format!(
                    "class {k} needs at least 3 samples to split, has {n}"
                )));
            }
            let n_train = ((split * n as f64).round() as usize).clamp(2, n - 1);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(r);
            let mut train = idx[..n_train].to_vec();
            train.sort_unstable();
            Ok(train)
        })
        .collect()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Repeated train/test evaluation of every classifier. Repetitions run
/// sequentially so wall times are not distorted by contention.
pub fn run_classification(
    data: &LabeledDataset,
    cfg: &ClassificationConfig,
) -> Result<ClassificationReport> {
    if cfg.reps == 0 {
        return Err(RscmError::InvalidParameter(
            "reps must be at least 1".into(),
        ));
    }
    if cfg.classifiers.is_empty() {
        return Err(RscmError::InvalidParameter(
            "at least one method is required".into(),
        ));
    }
    let sizes = data.class_sizes();
    let mut accuracies = Vec::with_capacity(cfg.reps);
    let mut wall_times = Vec::with_capacity(cfg.reps);
    let mut splits = Vec::with_capacity(cfg.reps);
    for rep in 0..cfg.reps {
        let mut r = rng::stream(cfg.seed, rep as u64);
        let train_idx = stratified_split(&sizes, cfg.split, &mut r)?;
        let cv_seed: u64 = r.random();
        let (train, test): (Vec<_>, Vec<_>) = data
            .classes
            .iter()
            .zip(&train_idx)
            .map(|(x, tr)| {
                let te: Vec<usize> = (0..x.nrows())
                    .filter(|i| tr.binary_search(i).is_err())
                    .collect();
                (x.select_rows(tr), x.select_rows(&te))
            })
            .unzip();
        let train = LabeledDataset::from_classes(data.labels.clone(), train)?;
        let n_test: usize = test.iter().map(|t| t.nrows()).sum();
        let mut acc = Vec::with_capacity(cfg.classifiers.len());
        let mut secs = Vec::with_capacity(cfg.classifiers.len());
        for c in &cfg.classifiers {
            let spec = match *c {
                Classifier::Shrink(m) => TrainSpec::Method(m),
                Classifier::GridCv { folds } => {
                    TrainSpec::CrossValidate(CvSpec::standard(folds, cv_seed)?)
                }
            };
            let start = Instant::now();
            let model = RdaModel::train(&train, &spec)?;
            secs.push(start.elapsed().as_secs_f64());
            let mut correct = 0;
            for (k, t) in test.iter().enumerate() {
                correct += model.predict_rows(t)?.iter().filter(|&&p| p == k).count();
            }
            acc.push(correct as f64 / n_test as f64);
        }
        info!("repetition {rep}: {acc:?}");
        accuracies.push(acc);
        wall_times.push(secs);
        splits.push(train_idx);
    }
    let rows = cfg
        .classifiers
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let a: Vec<f64> = accuracies.iter().map(|r| r[i]).collect();
            let mut t: Vec<f64> = wall_times.iter().map(|r| r[i]).collect();
            let (mean_accuracy, std_accuracy) = mean_std(&a);
            ClassificationRow {
                method: c.to_string(),
                mean_accuracy,
                std_accuracy,
                median_wall_time: median(&mut t),
                reps: cfg.reps,
            }
        })
        .collect();
    Ok(ClassificationReport {
        rows,
        accuracies,
        wall_times,
        splits,
    })
}

pub fn write_classification_csv<W: Write>(rows: &[ClassificationRow], mut out: W) -> Result<()> {
    writeln!(out, "{CLASSIFICATION_CSV_VERSION}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method",
        "mean_accuracy",
        "std_accuracy",
        "median_wall_time",
        "reps",
    ])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.mean_accuracy.to_string(),
            r.std_accuracy.to_string(),
            r.median_wall_time.to_string(),
            r.reps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub alpha: f64,
    pub beta: f64,
    pub nmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDump {
    pub polynomial: FullPolynomial,
    pub grid: Vec<SurfacePoint>,
    pub optimum: TuningResult,
}

impl SurfaceDump {
    pub fn optimum_nmse(&self) -> f64 {
        self.optimum.mse / self.polynomial.normalization
    }
}

/// Theoretical NMSE of the Full estimator over a grid, from ground-truth
/// moments of `populations`, for class index `class` (0-based).
pub fn surface_from_populations(
    populations: &[PopulationSpec],
    class: usize,
    step: f64,
) -> Result<SurfaceDump> {
    let moments = PopulationMoments::from_populations(populations)?;
    let polynomial = msepoly::coefficients_full(&moments, class)?;
    let values = tuning::grid_points(step)?;
    let grid = values
        .iter()
        .flat_map(|&alpha| values.iter().map(move |&beta| (alpha, beta)))
        .map(|(alpha, beta)| SurfacePoint {
            alpha,
            beta,
            nmse: polynomial.nmse(alpha, beta),
        })
        .collect();
    let optimum = tuning::optimize_full(&polynomial, FullOptions::default())?;
    Ok(SurfaceDump {
        polynomial,
        grid,
        optimum,
    })
}

/// [`surface_from_populations`] for a preset setup. Class means do not
/// affect the surface.
pub fn dump_surface(setup: Setup, class: usize, step: f64, p: usize) -> Result<SurfaceDump> {
    if setup == Setup::D {
        return Err(RscmError::Input(
            "setup D is randomized and has no fixed surface".into(),
        ));
    }
    let pops = setup.populations(p, &mut rng::stream(0, EXPERIMENT_STREAM))?;
    surface_from_populations(&pops, class, step)
}

pub fn write_surface_csv<W: Write>(dump: &SurfaceDump, mut out: W) -> Result<()> {
    writeln!(out, "{SURFACE_CSV_VERSION}")?;
    writeln!(
        out,
        "# polynomial {}",
        serde_json::to_string(&dump.polynomial)?
    )?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["alpha", "beta", "nmse", "kind"])?;
    for pt in &dump.grid {
        w.write_record([
            pt.alpha.to_string(),
            pt.beta.to_string(),
            pt.nmse.to_string(),
            "grid".into(),
        ])?;
    }
    w.write_record([
        dump.optimum.alpha.to_string(),
        dump.optimum.beta.to_string(),
        dump.optimum_nmse().to_string(),
        "optimum".into(),
    ])?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEstimate {
    pub label: String,
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub variant: Variant,
    #[serde(with = "crate::json::rows")]
    pub matrix: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: Method,
    pub features: Vec<String>,
    pub classes: Vec<ClassEstimate>,
}

pub fn estimate_dataset(data: &LabeledDataset, method: Method) -> Result<EstimateReport> {
    let stats = SampleStats::from_classes(&data.classes)?;
    let est = shrink::estimate_all(&stats, method)?;
    let classes = est
        .into_iter()
        .zip(&data.labels)
        .zip(data.class_sizes())
        .map(|((e, label), n)| ClassEstimate {
            label: label.clone(),
            n,
            alpha: e.alpha,
            beta: e.beta,
            variant: e.variant,
            matrix: e.matrix,
        })
        .collect();
    Ok(EstimateReport {
        method,
        features: data.features.clone(),
        classes,
    })
}
