//! Plug-in estimates of the population scalars the MSE polynomials depend on.
//!
//! For class `k` these are the scale `η_k = tr(M_k)/p`, the sphericity
//! `γ_k = ‖M_k‖²_F / (p η_k²)`, the elliptical kurtosis `κ_k` and the inner
//! products `⟨M_i, M_j⟩`. The same [`PopulationMoments`] type carries
//! ground-truth values built from known populations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RscmError};
use crate::frobenius_inner;
use crate::stats::{self, SampleStats};
use crate::synth::{self, PopulationSpec};

/// Lower bound of the elliptical kurtosis in dimension `p`.
pub fn kurtosis_floor(p: usize) -> f64 {
    -2.0 / (p as f64 + 2.0)
}

/// Elliptical kurtosis from marginal central moments (divisor `n`).
///
/// Coordinates with zero variance are skipped. Falls back to 0 (Gaussian)
/// when fewer than four samples are available.
pub fn kurtosis_from_moments(m2: &DVector<f64>, m4: &DVector<f64>, n: usize) -> Result<f64> {
    let p = m2.len();
    if n < 4 {
        log::warn!("only {n} samples; elliptical kurtosis set to 0");
        return Ok(0.0);
    }
    let excess: Vec<f64> = m2
        .iter()
        .zip(m4.iter())
        .filter(|(v, _)| **v > 0.0)
        .map(|(v, q)| q / (v * v) - 3.0)
        .collect();
    if excess.is_empty() {
        return Err(RscmError::Estimation(
            "every coordinate has zero variance".into(),
        ));
    }
    let avg = excess.iter().sum::<f64>() / (3.0 * excess.len() as f64);
    Ok(avg.max(kurtosis_floor(p)))
}

pub fn estimate_kurtosis(samples: &DMatrix<f64>) -> Result<f64> {
    let (m2, m4) = stats::marginal_moments(samples);
    kurtosis_from_moments(&m2, &m4, samples.nrows())
}

/// SSCM-based sphericity, clipped to `[1, p]`.
pub fn estimate_sphericity(sscm: &DMatrix<f64>, n: usize) -> f64 {
    let p = sscm.nrows() as f64;
    let n = n as f64;
    let raw = p * n / (n - 1.0) * (sscm.norm_squared() - 1.0 / n);
    raw.clamp(1.0, p)
}

pub fn estimate_scale(scm: &DMatrix<f64>) -> f64 {
    scm.trace() / scm.nrows() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum InnerProductMode {
    /// `η̂_i η̂_j p² ⟨S̃_i, S̃_j⟩`
    #[default]
    Sscm,
    /// `⟨S_i, S_j⟩`, for diagnostics.
    Scm,
}

/// Estimated `⟨M_i, M_j⟩`; the diagonal is always `p γ̂_k η̂_k²`.
pub fn estimate_inner_products(
    stats: &SampleStats,
    eta: &[f64],
    gamma: &[f64],
    mode: InnerProductMode,
) -> Result<DMatrix<f64>> {
    let k = stats.num_classes();
    if eta.len() != k || gamma.len() != k {
        return Err(RscmError::DimensionMismatch {
            expected: k,
            got: eta.len().min(gamma.len()),
        });
    }
    let p = stats.dim() as f64;
    let mut ip = DMatrix::zeros(k, k);
    for i in 0..k {
        ip[(i, i)] = p * gamma[i] * eta[i] * eta[i];
        for j in (i + 1)..k {
            let (a, b) = (&stats.classes[i], &stats.classes[j]);
            let v = match mode {
                InnerProductMode::Sscm => {
                    eta[i] * eta[j] * p * p * frobenius_inner(&a.sscm, &b.sscm)
                }
                InnerProductMode::Scm => frobenius_inner(&a.scm, &b.scm),
            };
            ip[(i, j)] = v;
            ip[(j, i)] = v;
        }
    }
    Ok(ip)
}

/// `(E‖S_k‖²_F, E‖I_{S_k}‖²_F)` for an elliptical population.
pub fn expected_scm_norms(eta: f64, gamma: f64, kappa: f64, n: usize, p: usize) -> (f64, f64) {
    let (tau1, tau2) = taus(kappa, n);
    let p = p as f64;
    let e_s = p * eta * eta * (tau1 * p + (1.0 + tau1 + tau2) * gamma);
    let e_is = eta * eta * ((1.0 + tau2) * p + 2.0 * tau1 * gamma);
    (e_s, e_is)
}

/// `(τ1, τ2) = (1/(n-1) + κ/n, κ/n)`.
pub fn taus(kappa: f64, n: usize) -> (f64, f64) {
    let n = n as f64;
    (1.0 / (n - 1.0) + kappa / n, kappa / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMoments {
    pub n: usize,
    pub eta: f64,
    pub gamma: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationMoments {
    pub p: usize,
    pub classes: Vec<ClassMoments>,
    /// `ip[(i, j)] ≈ ⟨M_i, M_j⟩`
    #[serde(with = "crate::json::rows")]
    pub ip: DMatrix<f64>,
}

impl PopulationMoments {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        stats::pooled_weights(&self.classes.iter().map(|c| c.n).collect::<Vec<_>>())
    }

    pub fn trace(&self, k: usize) -> f64 {
        self.p as f64 * self.classes[k].eta
    }

    pub fn taus(&self, k: usize) -> (f64, f64) {
        taus(self.classes[k].kappa, self.classes[k].n)
    }

    pub fn expected_norms(&self, k: usize) -> (f64, f64) {
        let c = &self.classes[k];
        expected_scm_norms(c.eta, c.gamma, c.kappa, c.n, self.p)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.classes.len();
        if k == 0 {
            return Err(RscmError::Input(
                "moments for at least one class are required".into(),
            ));
        }
        if self.ip.shape() != (k, k) {
            return Err(RscmError::DimensionMismatch {
                expected: k,
                got: self.ip.nrows(),
            });
        }
        for (i, c) in self.classes.iter().enumerate() {
            if c.n < 2 {
                return Err(RscmError::InsufficientSamples {
                    needed: 2,
                    got: c.n,
                });
            }
            let finite = [c.eta, c.gamma, c.kappa].iter().all(|v| v.is_finite());
            if !finite || !self.ip.row(i).iter().all(|v| v.is_finite()) {
                return Err(RscmError::Estimation(format!(
                    "non-finite moments for class {i}"
                )));
            }
        }
        Ok(())
    }

    /// Plug-in estimates from sample statistics.
    pub fn estimate(stats: &SampleStats, mode: InnerProductMode) -> Result<Self> {
        let p = stats.dim();
        let mut classes = Vec::with_capacity(stats.num_classes());
        for c in &stats.classes {
            classes.push(ClassMoments {
                n: c.n,
                eta: estimate_scale(&c.scm),
                gamma: estimate_sphericity(&c.sscm, c.n),
                kappa: kurtosis_from_moments(&c.m2, &c.m4, c.n)?,
            });
        }
        let eta: Vec<f64> = classes.iter().map(|c| c.eta).collect();
        let gamma: Vec<f64> = classes.iter().map(|c| c.gamma).collect();
        let ip = estimate_inner_products(stats, &eta, &gamma, mode)?;
        Ok(Self { p, classes, ip })
    }

    /// Exact values for known populations.
    pub fn from_populations(pops: &[PopulationSpec]) -> Result<Self> {
        let first = pops
            .first()
            .ok_or_else(|| RscmError::Input("at least one population is required".into()))?;
        let p = first.dim();
        let covs = pops
            .iter()
            .map(|pop| {
                if pop.dim() != p {
                    return Err(RscmError::DimensionMismatch {
                        expected: p,
                        got: pop.dim(),
                    });
                }
                pop.covariance()
            })
            .collect::<Result<Vec<_>>>()?;
        let classes = pops
            .iter()
            .map(|pop| {
                let tm = synth::theoretical_moments(pop)?;
                Ok(ClassMoments {
                    n: pop.n,
                    eta: tm.eta,
                    gamma: tm.gamma,
                    kappa: tm.kappa,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let k = pops.len();
        let ip = DMatrix::from_fn(k, k, |i, j| frobenius_inner(&covs[i], &covs[j]));
        Ok(Self { p, classes, ip })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::synth::{CovStructure, CovarianceSpec};

    fn population(cov: CovarianceSpec, p: usize, dof: f64, n: usize) -> PopulationSpec {
        PopulationSpec::new(DVector::zeros(p), cov, dof, n).unwrap()
    }

    fn draw(pop: &PopulationSpec, seed: u64) -> DMatrix<f64> {
        synth::sample_population(pop, &mut rng::stream(seed, 0)).unwrap()
    }

    #[test]
    fn kurtosis_of_gaussian_and_t8() {
        let p = 5;
        let eye = CovarianceSpec::Explicit(DMatrix::identity(p, p));
        let g = estimate_kurtosis(&draw(
            &population(eye.clone(), p, f64::INFINITY, 100_000),
            1,
        ))
        .unwrap();
        assert!(g.abs() < 0.05, "{g}");
        let t = estimate_kurtosis(&draw(&population(eye, p, 8.0, 100_000), 2)).unwrap();
        assert!((t - 0.5).abs() < 0.1, "{t}");
    }

    #[test]
    fn kurtosis_floor_applies_to_two_point_marginals() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0, 1.0]);
        assert_eq!(estimate_kurtosis(&x).unwrap(), -0.5);
    }

    #[test]
    fn kurtosis_skips_constant_coordinates() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 7.0, -1.0, 7.0, 1.0, 7.0, -1.0, 7.0]);
        // one usable coordinate with raw kurtosis -2/3 → floor -0.5
        assert_eq!(estimate_kurtosis(&x).unwrap(), -0.5);
        let constant = DMatrix::from_element(5, 3, 2.0);
        assert!(matches!(
            estimate_kurtosis(&constant),
            Err(RscmError::Estimation(_))
        ));
    }

    #[test]
    fn kurtosis_small_sample_fallback() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 10.0]);
        assert_eq!(estimate_kurtosis(&x).unwrap(), 0.0);
    }

    #[test]
    fn sphericity_clipping() {
        let p = 4;
        let spherical = DMatrix::<f64>::identity(p, p) / p as f64;
        assert_eq!(estimate_sphericity(&spherical, 20), 1.0);

        let mut rank_one = DMatrix::zeros(p, p);
        rank_one[(0, 0)] = 1.0;
        assert!((estimate_sphericity(&rank_one, 5) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn sphericity_of_ar1_t8() {
        let p = 50;
        let pop = population(
            CovarianceSpec::Structured(CovStructure::ar1(p, 0.5)),
            p,
            8.0,
            500,
        );
        let truth = synth::theoretical_moments(&pop).unwrap().gamma;
        let x = draw(&pop, 3);
        let (s, _) = stats::sscm(&x, &stats::spatial_median(&x).unwrap()).unwrap();
        let g = estimate_sphericity(&s, 500);
        assert!((g - truth).abs() / truth < 0.1, "{g} vs {truth}");
    }

    #[test]
    fn scale_examples() {
        assert_eq!(estimate_scale(&(DMatrix::identity(3, 3) * 2.0)), 2.0);
        assert_eq!(
            estimate_scale(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]))),
            2.0
        );
        let p = 4;
        let x = draw(
            &population(
                CovarianceSpec::Explicit(DMatrix::identity(p, p)),
                p,
                f64::INFINITY,
                10_000,
            ),
            4,
        );
        let eta = estimate_scale(&stats::scm(&x).unwrap());
        assert!((eta - 1.0).abs() < 0.05);
    }

    #[test]
    fn inner_products_of_ar1_pair() {
        let p = 3;
        let a = population(
            CovarianceSpec::Structured(CovStructure::ar1(p, 0.2)),
            p,
            f64::INFINITY,
            2000,
        );
        let b = population(
            CovarianceSpec::Structured(CovStructure::ar1(p, 0.5)),
            p,
            f64::INFINITY,
            2000,
        );
        let truth = PopulationMoments::from_populations(&[a.clone(), b.clone()]).unwrap();
        assert!((truth.ip[(0, 1)] - 3.42).abs() < 1e-12);

        let stats = SampleStats::from_classes(&[draw(&a, 5), draw(&b, 6)]).unwrap();
        let m = PopulationMoments::estimate(&stats, InnerProductMode::Sscm).unwrap();
        assert!((m.ip[(0, 1)] - 3.42).abs() / 3.42 < 0.1, "{}", m.ip[(0, 1)]);
        assert_eq!(m.ip, m.ip.transpose());
        for k in 0..2 {
            let c = m.classes[k];
            assert_eq!(m.ip[(k, k)], 3.0 * c.gamma * c.eta * c.eta);
        }
    }

    #[test]
    fn inner_products_of_identical_spherical_classes() {
        let p = 6;
        let pop = population(
            CovarianceSpec::Explicit(DMatrix::identity(p, p)),
            p,
            f64::INFINITY,
            5000,
        );
        let stats = SampleStats::from_classes(&[draw(&pop, 7), draw(&pop, 8)]).unwrap();
        for mode in [InnerProductMode::Sscm, InnerProductMode::Scm] {
            let m = PopulationMoments::estimate(&stats, mode).unwrap();
            assert!(
                (m.ip[(0, 1)] - p as f64).abs() < 0.1 * p as f64,
                "{mode:?} {}",
                m.ip[(0, 1)]
            );
        }
    }

    #[test]
    fn expected_norms_examples() {
        let (s, is) = expected_scm_norms(1.0, 1.0, 0.0, 3, 2);
        assert!((s - 5.0).abs() < 1e-12);
        assert!((is - 3.0).abs() < 1e-12);

        let (s, _) = expected_scm_norms(1.0, 1.0, 0.5, 10, 2);
        assert!(
            (s - 2.0 * (2.0 * (1.0 / 9.0 + 0.05) + (1.0 + 1.0 / 9.0 + 0.1) * 1.0)).abs() < 1e-12
        );
        assert!((s - 3.0667).abs() < 1e-4);

        // n → ∞ recovers ‖M‖² = pη²γ
        let (s, _) = expected_scm_norms(1.3, 2.0, 0.4, 100_000_000, 7);
        assert!((s - 7.0 * 1.69 * 2.0).abs() / s < 1e-6);
    }

    #[test]
    fn expected_norms_match_monte_carlo_small_case() {
        let (p, n, trials) = (2, 3, 100_000);
        let pop = population(
            CovarianceSpec::Explicit(DMatrix::identity(p, p)),
            p,
            f64::INFINITY,
            n,
        );
        let sampler = synth::Sampler::new(&pop).unwrap();
        let mut r = rng::stream(13, 0);
        let (mut acc_s, mut acc_is) = (0.0, 0.0);
        for _ in 0..trials {
            let s = stats::scm(&sampler.sample(n, &mut r)).unwrap();
            acc_s += s.norm_squared();
            acc_is += s.trace().powi(2) / p as f64;
        }
        let (es, eis) = expected_scm_norms(1.0, 1.0, 0.0, n, p);
        assert!((acc_s / trials as f64 - es).abs() / es < 0.02);
        assert!((acc_is / trials as f64 - eis).abs() / eis < 0.02);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sphericity_in_range(entries in proptest::collection::vec(-3.0f64..3.0, 20), n in 2usize..500) {
                let x = DMatrix::from_vec(5, 4, entries);
                let (s, _) = stats::sscm(&x, &DVector::zeros(4)).unwrap_or((DMatrix::identity(4, 4) / 4.0, 5));
                let g = estimate_sphericity(&s, n);
                prop_assert!((1.0..=4.0).contains(&g));
            }

            #[test]
            fn kurtosis_respects_floor(entries in proptest::collection::vec(-5.0f64..5.0, 8..60)) {
                let n = entries.len() / 2;
                let x = DMatrix::from_vec(n, 2, entries[..2 * n].to_vec());
                if let Ok(k) = estimate_kurtosis(&x) {
                    prop_assert!(k >= kurtosis_floor(2));
                }
            }

            #[test]
            fn expected_norm_exceeds_population_norm(eta in 0.1f64..5.0, gamma in 1.0f64..10.0,
                    kappa in 0.0f64..3.0, n in 2usize..200, p in 10usize..40) {
                let gamma = gamma.min(p as f64);
                let (s, _) = expected_scm_norms(eta, gamma, kappa, n, p);
                prop_assert!(s > p as f64 * eta * eta * gamma);
            }
        }
    }
}
