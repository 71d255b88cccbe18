//! Test observables in the unperturbed basis, eigenstate expectations,
//! microcanonical averages and the eigenstate-to-eigenstate variance.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::envelope::LagProfile;
use crate::error::{Error, Result};
use crate::matrix::SymmetricMatrix;
use crate::model::UnperturbedSpectrum;
use crate::spectra::EigenSystem;
use crate::{rng, stats};

const BOOTSTRAP_RESAMPLES: usize = 1000;
/// Participation 1/ΣΛ² below which the Gaussian-overlap picture is not trusted.
const GAUSSIAN_PARTICIPATION: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ProfileShape {
    /// f(x) = x
    Linear,
    Constant { value: f64 },
    /// f(x) = x²
    Quadratic,
    /// f(x) = cos(2π · periods · x)
    Cosine { periods: f64 },
    /// f_j = (-1)^j
    Staggered,
}

impl ProfileShape {
    pub fn eval(&self, j: usize, n: usize) -> f64 {
        let x = j as f64 / n as f64;
        match *self {
            ProfileShape::Linear => x,
            ProfileShape::Constant { value } => value,
            ProfileShape::Quadratic => x * x,
            ProfileShape::Cosine { periods } => (2.0 * std::f64::consts::PI * periods * x).cos(),
            ProfileShape::Staggered => {
                if j % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservableSpec {
    DiagonalProfile {
        #[serde(flatten)]
        shape: ProfileShape,
    },
    BandedRandom { width: usize, scale: f64, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableKind {
    DiagonalProfile,
    BandedRandom { width: usize, scale: f64, seed: u64 },
    Custom,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observable {
    pub matrix: SymmetricMatrix,
    pub kind: ObservableKind,
    bandwidth: usize,
    square_diagonal: Vec<f64>,
}

impl Observable {
    fn wrap(matrix: SymmetricMatrix, kind: ObservableKind) -> Result<Self> {
        if !matrix.is_finite() {
            return Err(Error::NonFinite("observable"));
        }
        let bandwidth = matrix.bandwidth();
        let square_diagonal = matrix.square_diagonal();
        Ok(Self {
            matrix,
            kind,
            bandwidth,
            square_diagonal,
        })
    }

    /// diag(f(0/n), f(1/n), ...).
    pub fn diagonal_profile(n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let diag: Vec<f64> = (0..n).map(|j| f(j as f64 / n as f64)).collect();
        Self::wrap(SymmetricMatrix::from_diagonal(&diag), ObservableKind::DiagonalProfile)
    }

    /// Symmetric entries N(0, scale²) for |j - k| <= width, zero beyond.
    pub fn banded_random(n: usize, width: usize, scale: f64, seed: u64) -> Result<Self> {
        if !(scale >= 0.0) || !scale.is_finite() {
            return Err(Error::invalid(format!("observable scale must be >= 0, got {scale}")));
        }
        if width >= n {
            return Err(Error::invalid(format!("observable width {width} must be below n = {n}")));
        }
        let mut r = rng::stream(seed);
        let mut m = SymmetricMatrix::zeros(n);
        for i in 0..n {
            for j in i..(i + width + 1).min(n) {
                let z: f64 = r.sample(StandardNormal);
                m.set(i, j, scale * z);
            }
        }
        Self::wrap(m, ObservableKind::BandedRandom { width, scale, seed })
    }

    pub fn custom(matrix: SymmetricMatrix) -> Result<Self> {
        Self::wrap(matrix, ObservableKind::Custom)
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.matrix.diagonal()
    }

    /// (A²)_jj = Σ_k A_jk².
    pub fn square_diagonal(&self) -> &[f64] {
        &self.square_diagonal
    }
}

pub fn make_observable(spec: &ObservableSpec, n: usize) -> Result<Observable> {
    match *spec {
        ObservableSpec::DiagonalProfile { shape } => {
            let diag: Vec<f64> = (0..n).map(|j| shape.eval(j, n)).collect();
            Observable::wrap(SymmetricMatrix::from_diagonal(&diag), ObservableKind::DiagonalProfile)
        }
        ObservableSpec::BandedRandom { width, scale, seed } => Observable::banded_random(n, width, scale, seed),
    }
}

fn check_dims(system: &EigenSystem, a: &Observable) -> Result<()> {
    if system.dim() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: system.dim(),
            found: a.dim(),
        });
    }
    Ok(())
}

/// ⟨i|A|i⟩ = Σ_jk c_ji c_ki A_jk.
pub fn eigenstate_expectation(system: &EigenSystem, a: &Observable, i: usize) -> Result<f64> {
    check_dims(system, a)?;
    if i >= system.dim() {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: system.dim(),
        });
    }
    Ok(a.matrix.quadratic_form_banded(system.column(i), a.bandwidth))
}

pub fn all_expectations(system: &EigenSystem, a: &Observable) -> Result<Vec<f64>> {
    check_dims(system, a)?;
    Ok((0..system.dim())
        .map(|i| a.matrix.quadratic_form_banded(system.column(i), a.bandwidth))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "weighting", rename_all = "snake_case")]
pub enum Weighting {
    Flat,
    /// Weights 1/(((f_j - e)/Δ)² + δ²), δ in level units.
    Lorentzian { half_width: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicrocanonicalWindow {
    pub center: f64,
    pub half_width: f64,
    pub weighting: Weighting,
}

impl MicrocanonicalWindow {
    pub fn flat(center: f64, half_width: f64) -> Self {
        Self {
            center,
            half_width,
            weighting: Weighting::Flat,
        }
    }

    /// Default half-width 2δΔ around `center`.
    pub fn around(center: f64, delta_levels: f64, spacing: f64) -> Self {
        Self::flat(center, 2.0 * delta_levels * spacing)
    }

    fn levels<'a>(&self, spectrum: &'a UnperturbedSpectrum) -> Result<Vec<usize>> {
        if !(self.half_width > 0.0) {
            return Err(Error::invalid(format!("window half-width must be positive, got {}", self.half_width)));
        }
        let idx: Vec<usize> = spectrum
            .levels
            .iter()
            .enumerate()
            .filter(|(_, f)| (**f - self.center).abs() <= self.half_width)
            .map(|(j, _)| j)
            .collect();
        if idx.is_empty() {
            return Err(Error::EmptyWindow(format!(
                "no levels within {} of {}",
                self.half_width, self.center
            )));
        }
        Ok(idx)
    }
}

pub fn microcanonical_average(a: &Observable, spectrum: &UnperturbedSpectrum, window: &MicrocanonicalWindow) -> Result<f64> {
    if a.dim() != spectrum.len() {
        return Err(Error::DimensionMismatch {
            expected: spectrum.len(),
            found: a.dim(),
        });
    }
    let idx = window.levels(spectrum)?;
    match window.weighting {
        Weighting::Flat => Ok(idx.iter().map(|&j| a.matrix.get(j, j)).sum::<f64>() / idx.len() as f64),
        Weighting::Lorentzian { half_width } => {
            if half_width == 0.0 {
                let nearest = idx
                    .iter()
                    .copied()
                    .min_by(|&x, &y| {
                        let dx = (spectrum.levels[x] - window.center).abs();
                        let dy = (spectrum.levels[y] - window.center).abs();
                        dx.total_cmp(&dy)
                    })
                    .unwrap_or(idx[0]);
                return Ok(a.matrix.get(nearest, nearest));
            }
            let d = spectrum.mean_spacing;
            let (mut num, mut den) = (0.0, 0.0);
            for &j in &idx {
                let x = (spectrum.levels[j] - window.center) / d;
                let w = 1.0 / (x * x + half_width * half_width);
                num += w * a.matrix.get(j, j);
                den += w;
            }
            Ok(num / den)
        }
    }
}

/// Σ_j Λ(i - j) A_jj over the physical levels, renormalized to the captured mass.
pub fn envelope_average(a: &Observable, envelope: &LagProfile, i: usize) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..a.dim() {
        let w = envelope.at(i as i64 - j as i64);
        if w != 0.0 {
            num += w * a.matrix.get(j, j);
            den += w;
        }
    }
    num / den
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EthVarianceMeasurement {
    pub probes: Vec<usize>,
    /// samples[r][p] = ⟨probe p|A|probe p⟩ in realization r.
    pub samples: Vec<Vec<f64>>,
    pub per_probe_mean: Vec<f64>,
    pub per_probe_variance: Vec<f64>,
    /// Mean over probes of the unbiased across-realization variance.
    pub variance: f64,
    pub bootstrap_se: f64,
}

/// Realization-to-realization variance of ⟨i|A|i⟩ at each fixed probe index i.
pub fn eth_variance_measured(
    systems: &[EigenSystem],
    a: &Observable,
    probes: &[usize],
    bootstrap_seed: u64,
) -> Result<EthVarianceMeasurement> {
    let r = systems.len();
    if r < 2 || r * probes.len() < 20 {
        return Err(Error::InsufficientSamples {
            needed: 20.max(2 * probes.len().max(1)),
            found: r * probes.len(),
        });
    }
    let samples: Vec<Vec<f64>> = systems
        .iter()
        .map(|s| probes.iter().map(|&i| eigenstate_expectation(s, a, i)).collect::<Result<Vec<f64>>>())
        .collect::<Result<_>>()?;
    let column = |p: usize, idx: &[usize]| -> Vec<f64> { idx.iter().map(|&k| samples[k][p]).collect() };
    let all: Vec<usize> = (0..r).collect();
    let per_probe_mean: Vec<f64> = (0..probes.len()).map(|p| stats::mean(&column(p, &all))).collect();
    let per_probe_variance: Vec<f64> = (0..probes.len()).map(|p| stats::variance(&column(p, &all))).collect();
    let variance = stats::mean(&per_probe_variance);
    let bootstrap_se = stats::bootstrap_se(r, BOOTSTRAP_RESAMPLES, bootstrap_seed, |idx| {
        let v: Vec<f64> = (0..probes.len()).map(|p| stats::variance(&column(p, idx))).collect();
        stats::mean(&v)
    });
    Ok(EthVarianceMeasurement {
        probes: probes.to_vec(),
        samples,
        per_probe_mean,
        per_probe_variance,
        variance,
        bootstrap_se,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EthVariancePrediction {
    /// 2 Σ_jk Λ(i-j) Λ(i-k) A_jk².
    pub exact_sum: f64,
    /// 2 Λ(0) Σ_j Λ(i-j) (A²)_jj.
    pub upper_bound: f64,
    /// 1 / Σ_r Λ(r)².
    pub participation: f64,
    pub gaussian_regime: bool,
}

pub fn eth_variance_predicted(envelope: &LagProfile, a: &Observable, i: usize) -> Result<EthVariancePrediction> {
    envelope.ensure_normalized()?;
    let n = a.dim();
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i, len: n });
    }
    let lam: Vec<f64> = (0..n).map(|j| envelope.at(i as i64 - j as i64)).collect();
    let bw = a.bandwidth();
    let mut exact = 0.0;
    for j in 0..n {
        if lam[j] == 0.0 {
            continue;
        }
        let row = a.matrix.row(j);
        let mut s = 0.0;
        for k in j.saturating_sub(bw)..(j + bw + 1).min(n) {
            s += lam[k] * row[k] * row[k];
        }
        exact += lam[j] * s;
    }
    let micro: f64 = lam.iter().zip(a.square_diagonal()).map(|(l, q)| l * q).sum();
    let participation = 1.0 / envelope.sum_of_squares();
    Ok(EthVariancePrediction {
        exact_sum: 2.0 * exact,
        upper_bound: 2.0 * envelope.at(0) * micro,
        participation,
        gaussian_regime: participation >= GAUSSIAN_PARTICIPATION,
    })
}

/// Population variance of ⟨j|A|j⟩₀ over the levels in the window.
pub fn unperturbed_variance(a: &Observable, spectrum: &UnperturbedSpectrum, window: &MicrocanonicalWindow) -> Result<f64> {
    let idx = window.levels(spectrum)?;
    if idx.len() < 2 {
        return Err(Error::EmptyWindow("need at least 2 levels".into()));
    }
    let vals: Vec<f64> = idx.iter().map(|&j| a.matrix.get(j, j)).collect();
    let m = stats::mean(&vals);
    Ok(vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::LorentzianParams;
    use crate::model::{build_unperturbed_spectrum, sample_hamiltonian, Jitter, PerturbationParams, Taper};
    use crate::spectra::diagonalize;
    use proptest::prelude::*;

    fn system(n: usize, eps: f64, band: usize, seed: u64) -> (UnperturbedSpectrum, SymmetricMatrix, EigenSystem) {
        let s = build_unperturbed_spectrum(n, 1.0, Jitter::None).unwrap();
        let h = sample_hamiltonian(
            &s,
            &PerturbationParams {
                epsilon: eps,
                band_cutoff: band,
                taper: Taper::Hard,
                seed,
            },
        )
        .unwrap();
        let sys = diagonalize(&h).unwrap();
        (s, h, sys)
    }

    #[test]
    fn test_make_observable() {
        let a = make_observable(&ObservableSpec::DiagonalProfile { shape: ProfileShape::Linear }, 4).unwrap();
        assert_eq!(a.diagonal(), vec![0.0, 0.25, 0.5, 0.75]);
        assert_eq!(a.bandwidth(), 0);
        let b = Observable::banded_random(30, 0, 1.0, 3).unwrap();
        assert_eq!(b.bandwidth(), 0);
        assert!(b.diagonal().iter().all(|&x| x != 0.0));
        let c = Observable::banded_random(30, 2, 1.0, 3).unwrap();
        assert_eq!(c, Observable::banded_random(30, 2, 1.0, 3).unwrap());
        assert!(c.bandwidth() <= 2);
        assert!(Observable::banded_random(30, 30, 1.0, 3).is_err());
        assert!(Observable::banded_random(30, 2, -1.0, 3).is_err());
    }

    #[test]
    fn test_identity_expectations() {
        let (_, _, sys) = system(60, 1.5, 20, 1);
        let id = make_observable(&ObservableSpec::DiagonalProfile { shape: ProfileShape::Constant { value: 1.0 } }, 60).unwrap();
        for i in 0..60 {
            assert!((eigenstate_expectation(&sys, &id, i).unwrap() - 1.0).abs() < 1e-12);
        }
        assert!(eigenstate_expectation(&sys, &id, 60).is_err());
    }

    #[test]
    fn test_zero_coupling_expectation() {
        let (_, _, sys) = system(20, 0.0, 5, 1);
        let a = Observable::banded_random(20, 3, 1.0, 8).unwrap();
        for i in 0..20 {
            assert_eq!(eigenstate_expectation(&sys, &a, i).unwrap(), a.matrix.get(i, i));
        }
    }

    #[test]
    fn test_hamiltonian_expectation_is_eigenvalue() {
        let (_, h, sys) = system(80, 2.0, 20, 5);
        let a = Observable::custom(h).unwrap();
        let scale = sys.eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for i in 0..80 {
            let v = eigenstate_expectation(&sys, &a, i).unwrap();
            assert!((v - sys.eigenvalues[i]).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn test_microcanonical_averages() {
        let s = build_unperturbed_spectrum(101, 1.0, Jitter::None).unwrap();
        let a = make_observable(&ObservableSpec::DiagonalProfile { shape: ProfileShape::Linear }, 101).unwrap();
        let single = MicrocanonicalWindow::flat(7.0, 0.4);
        assert_eq!(microcanonical_average(&a, &s, &single).unwrap(), a.matrix.get(7, 7));
        let mid = MicrocanonicalWindow::flat(50.0, 10.0);
        assert!((microcanonical_average(&a, &s, &mid).unwrap() - 50.0 / 101.0).abs() < 1e-14);
        let sharp = MicrocanonicalWindow {
            center: 30.0,
            half_width: 10.0,
            weighting: Weighting::Lorentzian { half_width: 1e-8 },
        };
        assert!((microcanonical_average(&a, &s, &sharp).unwrap() - 30.0 / 101.0).abs() < 1e-12);
        let empty = MicrocanonicalWindow::flat(500.0, 1.0);
        assert!(matches!(microcanonical_average(&a, &s, &empty), Err(Error::EmptyWindow(_))));
    }

    #[test]
    fn test_unperturbed_variance() {
        let s = build_unperturbed_spectrum(200, 1.0, Jitter::None).unwrap();
        let c = make_observable(&ObservableSpec::DiagonalProfile { shape: ProfileShape::Constant { value: 3.0 } }, 200).unwrap();
        assert_eq!(unperturbed_variance(&c, &s, &MicrocanonicalWindow::flat(100.0, 10.0)).unwrap(), 0.0);
        let a = make_observable(&ObservableSpec::DiagonalProfile { shape: ProfileShape::Linear }, 200).unwrap();
        // 21 levels, step 1/200: s²(k²-1)/12
        let v = unperturbed_variance(&a, &s, &MicrocanonicalWindow::flat(100.0, 10.0)).unwrap();
        let step = 1.0 / 200.0;
        assert!((v - step * step * (21.0 * 21.0 - 1.0) / 12.0).abs() < 1e-15);
        assert!(unperturbed_variance(&a, &s, &MicrocanonicalWindow::flat(100.0, 0.4)).is_err());
    }

    #[test]
    fn test_eth_measured_identity_and_refusal() {
        let systems: Vec<EigenSystem> = (0..5).map(|k| system(40, 1.0, 10, k).2).collect();
        let id = make_observable(&ObservableSpec::DiagonalProfile { shape: ProfileShape::Constant { value: 1.0 } }, 40).unwrap();
        let m = eth_variance_measured(&systems, &id, &[10, 15, 20, 25], 1).unwrap();
        assert!(m.variance < 1e-20);
        let single = vec![system(40, 0.0, 10, 0).2];
        assert!(matches!(
            eth_variance_measured(&single, &id, &[20; 20], 1),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn test_eth_predicted_degenerate_envelope() {
        let a = Observable::banded_random(50, 0, 1.0, 4).unwrap();
        let p = eth_variance_predicted(&LagProfile::delta(), &a, 20).unwrap();
        let x = a.matrix.get(20, 20);
        assert!((p.exact_sum - 2.0 * x * x).abs() < 1e-15);
        assert!(!p.gaussian_regime);
    }

    #[test]
    fn test_eth_predicted_identity_contact_term() {
        let env = LorentzianParams {
            amplitude: 2.0,
            half_width: 2.0 * std::f64::consts::PI,
        }
        .profile(300);
        let id = make_observable(&ObservableSpec::DiagonalProfile { shape: ProfileShape::Constant { value: 1.0 } }, 1001).unwrap();
        let p = eth_variance_predicted(&env, &id, 500).unwrap();
        assert!((p.exact_sum - 2.0 * env.sum_of_squares()).abs() < 1e-12);
        assert!(p.gaussian_regime);
    }

    #[test]
    fn test_eth_predicted_rejects_unnormalized() {
        let a = Observable::banded_random(50, 1, 1.0, 4).unwrap();
        let p = LagProfile::from_fn(3, |_| 1.0);
        assert!(matches!(eth_variance_predicted(&p, &a, 10), Err(Error::Unnormalized { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn prop_exact_sum_below_bound(delta in 0.5f64..20.0, width in 0usize..4, seed in any::<u64>(), i in 100usize..300) {
            let env = LorentzianParams { amplitude: 1.0, half_width: delta }.profile(150);
            let a = Observable::banded_random(400, width, 1.0, seed).unwrap();
            let p = eth_variance_predicted(&env, &a, i).unwrap();
            prop_assert!(p.exact_sum <= p.upper_bound * (1.0 + 1e-12));
            // brute-force oracle for the double sum
            let mut brute = 0.0;
            for j in 0..400 {
                for k in 0..400 {
                    let x = a.matrix.get(j, k);
                    brute += env.at(i as i64 - j as i64) * env.at(i as i64 - k as i64) * x * x;
                }
            }
            prop_assert!((p.exact_sum - 2.0 * brute).abs() < 1e-12 * brute.max(1e-300) + 1e-15);
        }
    }
}
