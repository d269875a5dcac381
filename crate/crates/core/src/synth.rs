//! Structured population covariances and elliptical samplers.
//!
//! Populations are multivariate Student t with `dof > 4` degrees of
//! freedom, scaled so that `cov` is the covariance matrix (not the scatter
//! matrix). `dof = ∞` is the Gaussian limit.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand_distr::{ChiSquared, Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RscmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StructureKind {
    /// `(M)_ij = rho^|i-j|`
    #[serde(rename = "AR1")]
    Ar1,
    /// Unit diagonal, `rho` off the diagonal.
    #[serde(rename = "CS")]
    Cs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovStructure {
    pub kind: StructureKind,
    pub rho: f64,
    pub dim: usize,
}

impl CovStructure {
    pub fn ar1(dim: usize, rho: f64) -> Self {
        Self {
            kind: StructureKind::Ar1,
            rho,
            dim,
        }
    }

    pub fn cs(dim: usize, rho: f64) -> Self {
        Self {
            kind: StructureKind::Cs,
            rho,
            dim,
        }
    }
}

pub fn make_covariance(structure: CovStructure) -> Result<DMatrix<f64>> {
    let CovStructure { kind, rho, dim } = structure;
    if dim == 0 {
        return Err(RscmError::InvalidStructure(
            "dimension must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(RscmError::InvalidStructure(format!(
            "rho = {rho} is outside [0, 1)"
        )));
    }
    Ok(match kind {
        StructureKind::Ar1 => DMatrix::from_fn(dim, dim, |i, j| rho.powi(i.abs_diff(j) as i32)),
        StructureKind::Cs => DMatrix::from_fn(dim, dim, |i, j| if i == j { 1.0 } else { rho }),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceSpec {
    Structured(CovStructure),
    Explicit(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSpec {
    pub mean: DVector<f64>,
    pub cov: CovarianceSpec,
    /// Degrees of freedom; `f64::INFINITY` selects the Gaussian.
    pub dof: f64,
    pub n: usize,
}

impl PopulationSpec {
    pub fn new(mean: DVector<f64>, cov: CovarianceSpec, dof: f64, n: usize) -> Result<Self> {
        let spec = Self { mean, cov, dof, n };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dof.is_nan() || self.dof <= 4.0 {
            return Err(RscmError::InvalidParameter(format!(
                "degrees of freedom must exceed 4 for finite fourth moments, got {}",
                self.dof
            )));
        }
        let p = match &self.cov {
            CovarianceSpec::Structured(s) => s.dim,
            CovarianceSpec::Explicit(m) => {
                if !m.is_square() {
                    return Err(RscmError::InvalidStructure(
                        "covariance must be square".into(),
                    ));
                }
                m.nrows()
            }
        };
        if p != self.mean.len() {
            return Err(RscmError::DimensionMismatch {
                expected: p,
                got: self.mean.len(),
            });
        }
        Ok(())
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        match &self.cov {
            CovarianceSpec::Structured(s) => make_covariance(*s),
            CovarianceSpec::Explicit(m) => Ok(m.clone()),
        }
    }

    /// Elliptical kurtosis `κ = 2/(ν-4)` of the t distribution, 0 for the Gaussian.
    pub fn kurtosis(&self) -> f64 {
        if self.dof.is_infinite() {
            0.0
        } else {
            2.0 / (self.dof - 4.0)
        }
    }
}

/// A population with its covariance factorized once, for repeated draws.
#[derive(Debug, Clone)]
pub struct Sampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
    dof: f64,
}

impl Sampler {
    pub fn new(spec: &PopulationSpec) -> Result<Self> {
        spec.validate()?;
        let cov = spec.covariance()?;
        let chol = Cholesky::<f64, Dyn>::new(cov).ok_or_else(|| {
            RscmError::NotPositiveDefinite("population covariance has no Cholesky factor".into())
        })?;
        Ok(Self {
            mean: spec.mean.clone(),
            factor: chol.l(),
            dof: spec.dof,
        })
    }

    /// Draws `n` rows.
    pub fn sample<R: rand::Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let p = self.mean.len();
        let z = DMatrix::<f64>::from_fn(p, n, |_, _| rng.sample(StandardNormal));
        let mut x = &self.factor * z;
        if self.dof.is_finite() {
            let chi = ChiSquared::new(self.dof).expect("dof > 4 checked at construction");
            for mut col in x.column_iter_mut() {
                // sqrt(ν/χ²) makes it t, sqrt((ν-2)/ν) turns scatter into covariance.
                let w: f64 = chi.sample(rng);
                col *= ((self.dof - 2.0) / w).sqrt();
            }
        }
        for mut col in x.column_iter_mut() {
            col += &self.mean;
        }
        x.transpose()
    }
}

pub fn sample_population<R: rand::Rng + ?Sized>(
    spec: &PopulationSpec,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    Ok(Sampler::new(spec)?.sample(spec.n, rng))
}

/// Ground-truth scalars of one population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalMoments {
    pub eta: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub trace: f64,
    pub frob2: f64,
}

pub fn theoretical_moments(spec: &PopulationSpec) -> Result<TheoreticalMoments> {
    let m = spec.covariance()?;
    let p = m.nrows() as f64;
    let trace = m.trace();
    let frob2 = m.norm_squared();
    let eta = trace / p;
    let gamma = (frob2 / (p * eta * eta)).clamp(1.0, p);
    Ok(TheoreticalMoments {
        eta,
        gamma,
        kappa: spec.kurtosis(),
        trace,
        frob2,
    })
}

/// The four simulation setups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setup {
    /// AR(1) covariances, rho = .2,.3,.4,.5, n = 25,50,75,100, ν = 8.
    A,
    /// Compound symmetry with the same rho, n and ν as A.
    B,
    /// Two AR(1) (rho = .6) and two CS (rho = .1) classes, n = 100, ν = 12,8,12,8.
    C,
    /// Randomized per trial.
    D,
}

impl std::str::FromStr for Setup {
    type Err = RscmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Setup::A),
            "B" => Ok(Setup::B),
            "C" => Ok(Setup::C),
            "D" => Ok(Setup::D),
            other => Err(RscmError::Input(format!("unknown setup '{other}'"))),
        }
    }
}

impl std::fmt::Display for Setup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Setup::A => "A",
            Setup::B => "B",
            Setup::C => "C",
            Setup::D => "D",
        };
        f.write_str(s)
    }
}

fn standard_normal_vector<R: rand::Rng + ?Sized>(p: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(p, |_, _| rng.sample(StandardNormal))
}

impl Setup {
    /// Populations for the deterministic setups A–C with class means drawn
    /// from `N(0, I)` using `rng`. Setup D is redrawn entirely per trial;
    /// see [`Setup::draw_randomized`].
    pub fn populations<R: rand::Rng + ?Sized>(
        self,
        p: usize,
        rng: &mut R,
    ) -> Result<Vec<PopulationSpec>> {
        let fixed: Vec<(CovStructure, f64, usize)> = match self {
            Setup::A => [0.2, 0.3, 0.4, 0.5]
                .iter()
                .zip([25, 50, 75, 100])
                .map(|(&r, n)| (CovStructure::ar1(p, r), 8.0, n))
                .collect(),
            Setup::B => [0.2, 0.3, 0.4, 0.5]
                .iter()
                .zip([25, 50, 75, 100])
                .map(|(&r, n)| (CovStructure::cs(p, r), 8.0, n))
                .collect(),
            Setup::C => vec![
                (CovStructure::ar1(p, 0.6), 12.0, 100),
                (CovStructure::ar1(p, 0.6), 8.0, 100),
                (CovStructure::cs(p, 0.1), 12.0, 100),
                (CovStructure::cs(p, 0.1), 8.0, 100),
            ],
            Setup::D => return Self::draw_randomized(p, rng),
        };
        fixed
            .into_iter()
            .map(|(s, dof, n)| {
                PopulationSpec::new(
                    standard_normal_vector(p, rng),
                    CovarianceSpec::Structured(s),
                    dof,
                    n,
                )
            })
            .collect()
    }

    /// One draw of the randomized setup: `n_k ~ U{10..200}`,
    /// `ν_k ~ U{5..12}`, AR(1) or CS by a fair coin, `rho ~ U(0, 0.9)`.
    pub fn draw_randomized<R: rand::Rng + ?Sized>(
        p: usize,
        rng: &mut R,
    ) -> Result<Vec<PopulationSpec>> {
        let rho_dist = Uniform::new(0.0, 0.9).expect("valid range");
        (0..4)
            .map(|_| {
                let n = rng.random_range(10..=200usize);
                let dof = rng.random_range(5..=12u32) as f64;
                let rho = rho_dist.sample(rng);
                let s = if rng.random_bool(0.5) {
                    CovStructure::ar1(p, rho)
                } else {
                    CovStructure::cs(p, rho)
                };
                let mean = standard_normal_vector(p, rng);
                PopulationSpec::new(mean, CovarianceSpec::Structured(s), dof, n)
            })
            .collect()
    }
}
