//! Unperturbed picket-fence spectrum, banded Gaussian perturbation, and the
//! assembled Hamiltonian `H_ij = f_i δ_ij + h_ij`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::SymmetricMatrix;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Jitter {
    #[default]
    None,
    /// Each level is displaced by an independent draw from U(-w/2, w/2).
    Uniform { width: f64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnperturbedSpectrum {
    pub levels: Vec<f64>,
    pub mean_spacing: f64,
    pub jitter: Jitter,
}

impl UnperturbedSpectrum {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

pub fn build_unperturbed_spectrum(n: usize, delta: f64, jitter: Jitter) -> Result<UnperturbedSpectrum> {
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 levels, got {n}")));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::invalid(format!("level spacing must be positive, got {delta}")));
    }
    let mut levels: Vec<f64> = (0..n).map(|k| delta * k as f64).collect();
    let mean_spacing = match jitter {
        Jitter::None => delta,
        Jitter::Uniform { width, seed } => {
            if !(width >= 0.0) || width >= delta {
                return Err(Error::invalid(format!(
                    "jitter width {width} must lie in [0, delta={delta})"
                )));
            }
            let mut r = rng::stream(seed);
            for f in levels.iter_mut() {
                *f += width * (r.random::<f64>() - 0.5);
            }
            (levels[n - 1] - levels[0]) / (n - 1) as f64
        }
    };
    Ok(UnperturbedSpectrum {
        levels,
        mean_spacing,
        jitter,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Taper {
    #[default]
    Hard,
    /// Weight exp(-gap / temperature) inside the band.
    Exponential { temperature: f64 },
}

impl Taper {
    /// Weight for an energy gap; `band_energy` is the hard cutoff b·Δ.
    pub fn weight(&self, gap: f64, band_energy: f64) -> Result<f64> {
        if !(gap >= 0.0) {
            return Err(Error::invalid(format!("energy gap must be nonnegative, got {gap}")));
        }
        match *self {
            Taper::Hard => Ok(if gap <= band_energy { 1.0 } else { 0.0 }),
            Taper::Exponential { temperature } => {
                if !(temperature > 0.0) {
                    return Err(Error::invalid(format!(
                        "taper temperature must be positive, got {temperature}"
                    )));
                }
                Ok((-gap / temperature).exp())
            }
        }
    }
}

pub fn taper_weight(energy_gap: f64, taper: &Taper, band_energy: f64) -> Result<f64> {
    taper.weight(energy_gap, band_energy)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationParams {
    pub epsilon: f64,
    pub band_cutoff: usize,
    #[serde(default)]
    pub taper: Taper,
    pub seed: u64,
}

impl PerturbationParams {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::invalid(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.band_cutoff + 1 > n {
            return Err(Error::invalid(format!(
                "band cutoff {} exceeds n-1={}",
                self.band_cutoff,
                n - 1
            )));
        }
        if let Taper::Exponential { temperature } = self.taper {
            if !(temperature > 0.0) {
                return Err(Error::invalid(format!(
                    "taper temperature must be positive, got {temperature}"
                )));
            }
        }
        Ok(())
    }
}

/// Draws h_ij for i <= j <= i + b in row-major order from N(0, ε²), times the taper weight.
pub fn sample_perturbation(spec: &UnperturbedSpectrum, params: &PerturbationParams) -> Result<SymmetricMatrix> {
    let n = spec.len();
    params.validate(n)?;
    let mut h = SymmetricMatrix::zeros(n);
    if params.epsilon == 0.0 {
        return Ok(h);
    }
    let mut r = rng::stream(params.seed);
    for i in 0..n {
        let hi = (i + params.band_cutoff + 1).min(n);
        for j in i..hi {
            let z: f64 = r.sample(StandardNormal);
            let w = match params.taper {
                Taper::Hard => 1.0,
                Taper::Exponential { temperature } => {
                    (-(spec.levels[j] - spec.levels[i]).abs() / temperature).exp()
                }
            };
            h.set(i, j, params.epsilon * w * z);
        }
    }
    Ok(h)
}

pub fn assemble_hamiltonian(spec: &UnperturbedSpectrum, perturbation: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    let n = spec.len();
    if perturbation.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: perturbation.dim(),
        });
    }
    let mut h = perturbation.clone();
    for (i, f) in spec.levels.iter().enumerate() {
        h.set(i, i, perturbation.get(i, i) + f);
    }
    Ok(h)
}

/// Convenience: spectrum, perturbation and Hamiltonian for one realization.
pub fn sample_hamiltonian(spec: &UnperturbedSpectrum, params: &PerturbationParams) -> Result<SymmetricMatrix> {
    let h1 = sample_perturbation(spec, params)?;
    assemble_hamiltonian(spec, &h1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(epsilon: f64, band: usize, seed: u64) -> PerturbationParams {
        PerturbationParams {
            epsilon,
            band_cutoff: band,
            taper: Taper::Hard,
            seed,
        }
    }

    #[test]
    fn test_picket_fence() {
        let s = build_unperturbed_spectrum(5, 1.0, Jitter::None).unwrap();
        assert_eq!(s.levels, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        let s = build_unperturbed_spectrum(2, 0.5, Jitter::None).unwrap();
        assert_eq!(s.mean_spacing, 0.5);
    }

    #[test]
    fn test_spectrum_errors() {
        assert!(build_unperturbed_spectrum(5, 0.0, Jitter::None).is_err());
        assert!(build_unperturbed_spectrum(5, -1.0, Jitter::None).is_err());
        assert!(build_unperturbed_spectrum(1, 1.0, Jitter::None).is_err());
        let j = Jitter::Uniform { width: 1.0, seed: 1 };
        assert!(build_unperturbed_spectrum(5, 1.0, j).is_err());
    }

    #[test]
    fn test_jitter_deterministic() {
        let j = Jitter::Uniform { width: 0.3, seed: 99 };
        let a = build_unperturbed_spectrum(1000, 1.0, j).unwrap();
        let b = build_unperturbed_spectrum(1000, 1.0, j).unwrap();
        assert_eq!(a, b);
        assert!(a.levels.windows(2).all(|w| w[1] > w[0]));
        assert!(a.levels.iter().enumerate().any(|(k, &f)| f != k as f64));
    }

    #[test]
    fn test_zero_epsilon_gives_zero_matrix() {
        let s = build_unperturbed_spectrum(20, 1.0, Jitter::None).unwrap();
        let h = sample_perturbation(&s, &params(0.0, 5, 1)).unwrap();
        assert!(h.as_slice().iter().all(|&x| x == 0.0));
        let full = assemble_hamiltonian(&s, &h).unwrap();
        assert_eq!(full.diagonal(), s.levels);
    }

    #[test]
    fn test_zero_band_is_diagonal() {
        let s = build_unperturbed_spectrum(400, 1.0, Jitter::None).unwrap();
        let h = sample_perturbation(&s, &params(1.0, 0, 3)).unwrap();
        assert_eq!(h.bandwidth(), 0);
        assert!(h.diagonal().iter().any(|&x| x != 0.0));
    }

    #[test]
    fn test_full_band_variance() {
        let s = build_unperturbed_spectrum(400, 1.0, Jitter::None).unwrap();
        let h = sample_perturbation(&s, &params(1.0, 399, 11)).unwrap();
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        let mut count = 0.0;
        for i in 0..400 {
            for j in (i + 1)..400 {
                let x = h.get(i, j);
                sum += x;
                sum2 += x * x;
                count += 1.0;
            }
        }
        let mean = sum / count;
        let var = sum2 / count - mean * mean;
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn test_assemble_two_level() {
        let s = build_unperturbed_spectrum(2, 1.0, Jitter::None).unwrap();
        let mut h1 = SymmetricMatrix::zeros(2);
        h1.set(0, 1, 0.1);
        let h = assemble_hamiltonian(&s, &h1).unwrap();
        assert_eq!(h.row(0), &[0.0, 0.1]);
        assert_eq!(h.row(1), &[0.1, 1.0]);
        let back = h.sub(&SymmetricMatrix::from_diagonal(&s.levels)).unwrap();
        assert_eq!(back, h1);
    }

    #[test]
    fn test_assemble_dimension_mismatch() {
        let s = build_unperturbed_spectrum(3, 1.0, Jitter::None).unwrap();
        assert!(matches!(
            assemble_hamiltonian(&s, &SymmetricMatrix::zeros(2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn test_taper_weight() {
        assert_eq!(taper_weight(0.0, &Taper::Hard, 3.0).unwrap(), 1.0);
        let e = Taper::Exponential { temperature: 2.0 };
        assert_eq!(taper_weight(0.0, &e, 3.0).unwrap(), 1.0);
        assert!((taper_weight(2.0, &e, 3.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(taper_weight(3.0 + 1e-9, &Taper::Hard, 3.0).unwrap(), 0.0);
        assert!(taper_weight(1.0, &Taper::Exponential { temperature: 0.0 }, 3.0).is_err());
        assert!(taper_weight(-1.0, &Taper::Hard, 3.0).is_err());
    }

    #[test]
    fn test_band_cutoff_validation() {
        let s = build_unperturbed_spectrum(10, 1.0, Jitter::None).unwrap();
        assert!(sample_perturbation(&s, &params(1.0, 10, 0)).is_err());
        assert!(sample_perturbation(&s, &params(-1.0, 2, 0)).is_err());
    }

    #[test]
    fn test_ensemble_statistics_at_fixed_entry() {
        let s = build_unperturbed_spectrum(30, 1.0, Jitter::None).unwrap();
        let r = 400;
        let eps = 1.5;
        let (mut sum, mut sum2) = (0.0, 0.0);
        for k in 0..r {
            let h = sample_perturbation(&s, &params(eps, 4, rng::realization_seed(77, k))).unwrap();
            let x = h.get(10, 12);
            sum += x;
            sum2 += x * x;
        }
        let mean = sum / r as f64;
        let var = (sum2 - r as f64 * mean * mean) / (r as f64 - 1.0);
        assert!(mean.abs() < 4.0 * eps / (r as f64).sqrt());
        assert!((var / (eps * eps) - 1.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn test_exponential_taper_scales_entries() {
        let s = build_unperturbed_spectrum(50, 1.0, Jitter::None).unwrap();
        let mut p = params(1.0, 10, 5);
        let hard = sample_perturbation(&s, &p).unwrap();
        p.taper = Taper::Exponential { temperature: 3.0 };
        let soft = sample_perturbation(&s, &p).unwrap();
        for i in 0..40 {
            let w = (-4.0f64 / 3.0).exp();
            assert!((soft.get(i, i + 4) - w * hard.get(i, i + 4)).abs() < 1e-14);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn prop_symmetric_banded_deterministic(n in 2usize..40, band in 0usize..40, eps in 0.0f64..3.0, seed in any::<u64>()) {
            let band = band.min(n - 1);
            let s = build_unperturbed_spectrum(n, 1.0, Jitter::None).unwrap();
            let p = params(eps, band, seed);
            let a = sample_perturbation(&s, &p).unwrap();
            let b = sample_perturbation(&s, &p).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.max_asymmetry(), 0.0);
            for i in 0..n {
                for j in 0..n {
                    if i.abs_diff(j) > band {
                        prop_assert_eq!(a.get(i, j), 0.0);
                    }
                }
            }
        }

        #[test]
        fn prop_spectrum_invariants(n in 2usize..300, delta in 0.01f64..10.0, frac in 0.0f64..0.99, seed in any::<u64>()) {
            let s = build_unperturbed_spectrum(n, delta, Jitter::Uniform { width: frac * delta, seed }).unwrap();
            prop_assert!(s.levels.windows(2).all(|w| w[1] > w[0]));
            let avg: f64 = s.levels.windows(2).map(|w| w[1] - w[0]).sum::<f64>() / (n - 1) as f64;
            prop_assert!((avg - s.mean_spacing).abs() <= 1e-12 * s.mean_spacing);
            let plain = build_unperturbed_spectrum(n, delta, Jitter::None).unwrap();
            for (k, f) in plain.levels.iter().enumerate() {
                prop_assert_eq!(*f, delta * k as f64);
            }
        }
    }
}
