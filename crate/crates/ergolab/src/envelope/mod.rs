//! Eigenvector envelope Λ(r) = ⟨c²⟩ at lag r = i - j: estimation from
//! decompositions, Lorentzian fitting, the perturbative tail, self-convolution,
//! a direct minimizer of the variational free energy, and the tail-integral
//! bound check.

mod fit;
mod tail;
mod variational;

pub use fit::{fit_lorentzian, fit_lorentzian_profile, FitMethod, FitRegime, LorentzianFit, MIN_FIT_HALF_RANGE};
pub use tail::{tail_integral_bound, TailBoundReport};
pub use variational::{free_energy, minimize_free_energy, VariationalProblem, VariationalSolution};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra::EigenSystem;

/// Tolerance on Σ Λ = 1 for inputs that must be normalized.
pub const NORMALIZATION_TOLERANCE: f64 = 0.02;

/// Values on the contiguous integer lag range `min_lag..min_lag + len`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagProfile {
    pub min_lag: i64,
    pub values: Vec<f64>,
}

impl LagProfile {
    pub fn from_fn(half_range: i64, f: impl Fn(i64) -> f64) -> Self {
        Self {
            min_lag: -half_range,
            values: (-half_range..=half_range).map(f).collect(),
        }
    }

    pub fn delta() -> Self {
        Self {
            min_lag: 0,
            values: vec![1.0],
        }
    }

    pub fn max_lag(&self) -> i64 {
        self.min_lag + self.values.len() as i64 - 1
    }

    pub fn lags(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.values.len()).map(move |k| self.min_lag + k as i64)
    }

    #[inline]
    pub fn at(&self, r: i64) -> f64 {
        let k = r - self.min_lag;
        if k < 0 || k >= self.values.len() as i64 {
            0.0
        } else {
            self.values[k as usize]
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn normalized(&self) -> Self {
        let s = self.sum();
        Self {
            min_lag: self.min_lag,
            values: self.values.iter().map(|v| v / s).collect(),
        }
    }

    pub fn ensure_normalized(&self) -> Result<()> {
        let s = self.sum();
        if !((s - 1.0).abs() <= NORMALIZATION_TOLERANCE) {
            return Err(Error::Unnormalized { sum: s });
        }
        Ok(())
    }

    /// Σ Λ(r)², which equals Λ₂(0).
    pub fn sum_of_squares(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvelopeEstimate {
    pub profile: LagProfile,
    /// Pairs (i, j) contributing to each lag, summed over realizations.
    pub counts: Vec<u64>,
    pub edge_exclusion: f64,
    pub realizations: usize,
    /// Per-realization envelopes on the same lag grid.
    pub per_realization: Vec<Vec<f64>>,
}

impl EnvelopeEstimate {
    pub fn lags(&self) -> Vec<i64> {
        self.profile.lags().collect()
    }

    pub fn value(&self, r: i64) -> f64 {
        self.profile.at(r)
    }

    pub fn count(&self, r: i64) -> u64 {
        let k = r - self.profile.min_lag;
        if k < 0 || k >= self.counts.len() as i64 {
            0
        } else {
            self.counts[k as usize]
        }
    }

    /// Standard error per lag from realization-to-realization scatter.
    pub fn standard_errors(&self) -> Option<Vec<f64>> {
        let r = self.per_realization.len();
        if r < 2 {
            return None;
        }
        let len = self.profile.values.len();
        Some(
            (0..len)
                .map(|k| {
                    let xs: Vec<f64> = self.per_realization.iter().map(|p| p[k]).collect();
                    (crate::stats::variance(&xs) / r as f64).sqrt()
                })
                .collect(),
        )
    }

    /// Largest |Λ̂(r) - Λ̂(-r)| in units of the pooled standard error, over lags |r| <= max_lag.
    pub fn max_asymmetry_z(&self, max_lag: i64) -> Option<f64> {
        let se = self.standard_errors()?;
        let mut worst = 0.0f64;
        for r in 1..=max_lag {
            let a = self.profile.at(r);
            let b = self.profile.at(-r);
            let ka = (r - self.profile.min_lag) as usize;
            let kb = (-r - self.profile.min_lag) as usize;
            let pooled = (se[ka] * se[ka] + se[kb] * se[kb]).sqrt();
            if pooled > 0.0 {
                worst = worst.max((a - b).abs() / pooled);
            } else if a != b {
                return Some(f64::INFINITY);
            }
        }
        Some(worst)
    }
}

/// Mean of c_ji² over retained eigenstates i and all j at each lag r = i - j.
pub fn estimate_envelope(systems: &[EigenSystem], edge_exclusion: f64) -> Result<EnvelopeEstimate> {
    if systems.is_empty() {
        return Err(Error::invalid("need at least one realization"));
    }
    if !(0.0..0.5).contains(&edge_exclusion) {
        return Err(Error::invalid(format!(
            "edge exclusion {edge_exclusion} must lie in [0, 0.5)"
        )));
    }
    let n = systems[0].dim();
    let cut = (edge_exclusion * n as f64).floor() as usize;
    if 2 * cut >= n {
        return Err(Error::EmptyWindow("no eigenstates retained after edge exclusion".into()));
    }
    let (lo, hi) = (cut, n - cut);
    let min_lag = -(n as i64 - 1);
    let len = 2 * n - 1;
    let mut counts_one = vec![0u64; len];
    for i in lo..hi {
        for j in 0..n {
            counts_one[(i as i64 - j as i64 - min_lag) as usize] += 1;
        }
    }
    let mut per_realization = Vec::with_capacity(systems.len());
    let mut total = vec![0.0; len];
    for sys in systems {
        if sys.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: sys.dim(),
            });
        }
        let mut acc = vec![0.0; len];
        for i in lo..hi {
            let col = sys.column(i);
            let base = (i as i64 - min_lag) as usize;
            for (j, c) in col.iter().enumerate() {
                acc[base - j] += c * c;
            }
        }
        for k in 0..len {
            total[k] += acc[k];
            if counts_one[k] > 0 {
                acc[k] /= counts_one[k] as f64;
            }
        }
        per_realization.push(acc);
    }
    let r = systems.len() as u64;
    let counts: Vec<u64> = counts_one.iter().map(|c| c * r).collect();
    let values = total
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    Ok(EnvelopeEstimate {
        profile: LagProfile { min_lag, values },
        counts,
        edge_exclusion,
        realizations: systems.len(),
        per_realization,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorentzianParams {
    pub amplitude: f64,
    pub half_width: f64,
}

impl LorentzianParams {
    pub fn value(&self, r: f64) -> f64 {
        self.amplitude / (r * r + self.half_width * self.half_width)
    }

    /// Lorentzian sampled on |r| <= half_range and renormalized to unit mass.
    pub fn profile(&self, half_range: i64) -> LagProfile {
        if self.half_width == 0.0 {
            return LagProfile::delta();
        }
        LagProfile::from_fn(half_range, |r| self.value(r as f64)).normalized()
    }
}

/// A = ε²/2Δ², δ = πε²/2Δ² (δ in level units).
pub fn predicted_params(epsilon: f64, delta_spacing: f64) -> Result<LorentzianParams> {
    if !(epsilon >= 0.0) || !(delta_spacing > 0.0) {
        return Err(Error::invalid(format!(
            "need epsilon >= 0 and spacing > 0, got ({epsilon}, {delta_spacing})"
        )));
    }
    let x = epsilon * epsilon / (2.0 * delta_spacing * delta_spacing);
    Ok(LorentzianParams {
        amplitude: x,
        half_width: std::f64::consts::PI * x,
    })
}

/// Weak-coupling overlap (ε/Δ)²/r².
pub fn perturbative_tail(epsilon: f64, delta_spacing: f64, r: i64) -> Result<f64> {
    if r == 0 {
        return Err(Error::invalid("perturbative tail undefined at r = 0"));
    }
    if !(delta_spacing > 0.0) {
        return Err(Error::invalid("spacing must be positive"));
    }
    let x = epsilon / delta_spacing;
    Ok(x * x / (r * r) as f64)
}

/// Λ₂(s) = Σ_r Λ(r) Λ(s - r), renormalized to unit mass.
pub fn convolve_envelope(lambda: &LagProfile) -> Result<LagProfile> {
    lambda.ensure_normalized()?;
    let m = lambda.values.len();
    let mut out = vec![0.0; 2 * m - 1];
    for (a, &x) in lambda.values.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (b, &y) in lambda.values.iter().enumerate() {
            out[a + b] += x * y;
        }
    }
    Ok(LagProfile {
        min_lag: 2 * lambda.min_lag,
        values: out,
    }
    .normalized())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_unperturbed_spectrum, sample_hamiltonian, Jitter, PerturbationParams, Taper};
    use crate::spectra::diagonalize;
    use proptest::prelude::*;

    fn systems(n: usize, eps: f64, band: usize, r: usize, seed: u64) -> Vec<EigenSystem> {
        let s = build_unperturbed_spectrum(n, 1.0, Jitter::None).unwrap();
        (0..r)
            .map(|k| {
                let p = PerturbationParams {
                    epsilon: eps,
                    band_cutoff: band,
                    taper: Taper::Hard,
                    seed: crate::rng::realization_seed(seed, k),
                };
                diagonalize(&sample_hamiltonian(&s, &p).unwrap()).unwrap()
            })
            .collect()
    }

    #[test]
    fn test_zero_coupling_gives_delta() {
        let est = estimate_envelope(&systems(30, 0.0, 5, 2, 1), 0.1).unwrap();
        assert_eq!(est.value(0), 1.0);
        assert!(est.lags().iter().filter(|&&r| r != 0).all(|&r| est.value(r) == 0.0));
    }

    #[test]
    fn test_estimate_errors() {
        assert!(estimate_envelope(&[], 0.1).is_err());
        let s = systems(10, 1.0, 3, 1, 1);
        assert!(estimate_envelope(&s, 0.5).is_err());
        assert!(estimate_envelope(&s, -0.1).is_err());
    }

    #[test]
    fn test_estimate_normalization_and_symmetry() {
        let est = estimate_envelope(&systems(300, 1.5, 80, 6, 5), 0.1).unwrap();
        assert!((est.profile.sum() - 1.0).abs() < 0.02);
        let z = est.max_asymmetry_z(30).unwrap();
        assert!(z < 5.0, "asymmetry z {z}");
        assert_eq!(est.count(0), 6 * 240);
    }

    #[test]
    fn test_predicted_params() {
        let p = predicted_params(0.5, 1.0).unwrap();
        assert!((p.amplitude - 0.125).abs() < 1e-15);
        assert!((p.half_width - std::f64::consts::PI / 8.0).abs() < 1e-15);
        let z = predicted_params(0.0, 3.0).unwrap();
        assert_eq!((z.amplitude, z.half_width), (0.0, 0.0));
        let q = predicted_params(2.0, 1.0).unwrap();
        assert!((q.half_width - 2.0 * std::f64::consts::PI).abs() < 1e-14);
        assert_eq!(std::f64::consts::PI * q.amplitude / q.half_width, 1.0);
    }

    #[test]
    fn test_perturbative_tail() {
        assert!((perturbative_tail(0.01, 1.0, 1).unwrap() - 1e-4).abs() < 1e-18);
        let a = perturbative_tail(0.3, 1.0, 3).unwrap();
        let b = perturbative_tail(0.3, 1.0, 6).unwrap();
        assert!((a / b - 4.0).abs() < 1e-12);
        assert!(perturbative_tail(0.3, 1.0, 0).is_err());
    }

    #[test]
    fn test_convolve_delta() {
        let d = convolve_envelope(&LagProfile::delta()).unwrap();
        assert_eq!(d.at(0), 1.0);
        assert_eq!(d.sum(), 1.0);
    }

    #[test]
    fn test_convolve_rejects_unnormalized() {
        let p = LagProfile::from_fn(3, |_| 1.0);
        assert!(matches!(convolve_envelope(&p), Err(Error::Unnormalized { .. })));
    }

    #[test]
    fn test_convolve_doubles_lorentzian_width() {
        let l = LorentzianParams {
            amplitude: 5.0 / std::f64::consts::PI,
            half_width: 5.0,
        };
        let l2 = convolve_envelope(&l.profile(4000)).unwrap();
        let fit = fit_lorentzian_profile(
            &l2,
            None,
            LorentzianParams {
                amplitude: 10.0 / std::f64::consts::PI,
                half_width: 8.0,
            },
            50.0,
        )
        .unwrap();
        assert!((fit.half_width / 10.0 - 1.0).abs() < 0.02, "{}", fit.half_width);
        // continuous-limit oracle: peak of a unit-mass Lorentzian of half-width 10
        let peak = 1.0 / (std::f64::consts::PI * 10.0);
        assert!((l2.at(0) / peak - 1.0).abs() < 0.02);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn prop_convolution_preserves_mass_and_symmetry(vals in proptest::collection::vec(0.0f64..1.0, 1..20)) {
            let total: f64 = vals.iter().sum();
            prop_assume!(total > 1e-3);
            let half = vals.len() as i64 - 1;
            let p = LagProfile::from_fn(half, |r| vals[r.unsigned_abs() as usize]).normalized();
            let c = convolve_envelope(&p).unwrap();
            prop_assert!((c.sum() - 1.0).abs() < 1e-12);
            for s in 0..=c.max_lag() {
                prop_assert!((c.at(s) - c.at(-s)).abs() < 1e-14);
            }
            // direct oracle at s = 0: Σ Λ(r)Λ(-r) / total²
            let direct: f64 = p.lags().map(|r| p.at(r) * p.at(-r)).sum();
            prop_assert!((c.at(0) - direct).abs() < 1e-12);
        }
    }
}
