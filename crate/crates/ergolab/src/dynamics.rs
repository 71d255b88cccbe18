//! Time averages in the perturbed eigenbasis (ħ = 1, time in units of 1/Δ):
//! infinite-time averages, finite-time expectations, quenches from unperturbed
//! states and superpositions with their interference term.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::envelope::{convolve_envelope, LagProfile};
use crate::error::{Error, Result};
use crate::observables::{all_expectations, Observable};
use crate::quadrature::composite_gauss_legendre;
use crate::spectra::EigenSystem;

const NORM_TOLERANCE: f64 = 1e-12;
/// Superpositions with at most this many components get an explicit cross-term sum.
const EXPLICIT_PAIR_LIMIT: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatePrep {
    pub amplitudes: Vec<Complex64>,
}

impl StatePrep {
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        let s = Self { amplitudes };
        let norm = s.norm_sqr();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::Unnormalized { sum: norm });
        }
        Ok(s)
    }

    pub fn normalized(mut amplitudes: Vec<Complex64>) -> Result<Self> {
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Unnormalized { sum: norm * norm });
        }
        for a in amplitudes.iter_mut() {
            *a /= norm;
        }
        Self::new(amplitudes)
    }

    pub fn basis(n: usize, e: usize) -> Result<Self> {
        if e >= n {
            return Err(Error::IndexOutOfRange { index: e, len: n });
        }
        let mut v = vec![Complex64::new(0.0, 0.0); n];
        v[e] = Complex64::new(1.0, 0.0);
        Ok(Self { amplitudes: v })
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    fn support(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&k| self.amplitudes[k].norm_sqr() > 0.0).collect()
    }
}

fn check(system: &EigenSystem, psi: &StatePrep, a: &Observable) -> Result<()> {
    for found in [psi.dim(), a.dim()] {
        if found != system.dim() {
            return Err(Error::DimensionMismatch {
                expected: system.dim(),
                found,
            });
        }
    }
    Ok(())
}

/// ⟨i|ψ⟩ for every eigenstate i.
pub fn eigenbasis_amplitudes(system: &EigenSystem, psi: &StatePrep) -> Vec<Complex64> {
    let support = psi.support();
    (0..system.dim())
        .map(|i| {
            let col = system.column(i);
            support.iter().map(|&j| psi.amplitudes[j] * col[j]).sum()
        })
        .collect()
}

/// Σ_i |⟨i|ψ⟩|² ⟨i|A|i⟩.
pub fn infinite_time_average(system: &EigenSystem, psi: &StatePrep, a: &Observable) -> Result<f64> {
    check(system, psi, a)?;
    system.ensure_nondegenerate()?;
    let phi = eigenbasis_amplitudes(system, psi);
    let diag = all_expectations(system, a)?;
    Ok(phi.iter().zip(&diag).map(|(p, d)| p.norm_sqr() * d).sum())
}

/// ⟨ψ(t)|A|ψ(t)⟩ with ψ(t) = Σ_i ⟨i|ψ⟩ e^{-iE_i t} |i⟩.
pub fn finite_time_expectation(system: &EigenSystem, psi: &StatePrep, a: &Observable, t: f64) -> Result<f64> {
    check(system, psi, a)?;
    let n = system.dim();
    let phi = eigenbasis_amplitudes(system, psi);
    let mut state = vec![Complex64::new(0.0, 0.0); n];
    for (i, p) in phi.iter().enumerate() {
        let ph = *p * Complex64::from_polar(1.0, -system.eigenvalues[i] * t);
        for (s, c) in state.iter_mut().zip(system.column(i)) {
            *s += ph * c;
        }
    }
    let bw = a.bandwidth();
    let mut acc = 0.0;
    for j in 0..n {
        let row = a.matrix.row(j);
        let mut s = Complex64::new(0.0, 0.0);
        for k in j.saturating_sub(bw)..(j + bw + 1).min(n) {
            s += row[k] * state[k];
        }
        acc += (state[j].conj() * s).re;
    }
    Ok(acc)
}

/// Precomputed ψ and A in the eigenbasis for repeated time evaluations.
pub struct TimeEvolver {
    energies: Vec<f64>,
    phi: Vec<Complex64>,
    /// cᵀ A c, row-major.
    a_eig: Vec<f64>,
}

impl TimeEvolver {
    pub fn new(system: &EigenSystem, psi: &StatePrep, a: &Observable) -> Result<Self> {
        check(system, psi, a)?;
        let n = system.dim();
        let c = Mat::<f64>::from_fn(n, n, |j, i| system.component(j, i));
        let am = Mat::<f64>::from_fn(n, n, |j, k| a.matrix.get(j, k));
        let mut ac = Mat::<f64>::zeros(n, n);
        matmul(ac.as_mut(), Accum::Replace, am.as_ref(), c.as_ref(), 1.0, Par::Seq);
        let mut out = Mat::<f64>::zeros(n, n);
        matmul(out.as_mut(), Accum::Replace, c.transpose(), ac.as_ref(), 1.0, Par::Seq);
        let mut a_eig = Vec::with_capacity(n * n);
        for i in 0..n {
            for k in 0..n {
                a_eig.push(out[(i, k)]);
            }
        }
        Ok(Self {
            energies: system.eigenvalues.clone(),
            phi: eigenbasis_amplitudes(system, psi),
            a_eig,
        })
    }

    fn n(&self) -> usize {
        self.energies.len()
    }

    pub fn value(&self, t: f64) -> f64 {
        let n = self.n();
        let mut acc = 0.0;
        for i in 0..n {
            acc += self.phi[i].norm_sqr() * self.a_eig[i * n + i];
            for k in (i + 1)..n {
                let w = self.phi[i].conj() * self.phi[k] * Complex64::from_polar(1.0, (self.energies[i] - self.energies[k]) * t);
                acc += 2.0 * w.re * self.a_eig[i * n + k];
            }
        }
        acc
    }

    pub fn infinite_time_value(&self) -> f64 {
        let n = self.n();
        (0..n).map(|i| self.phi[i].norm_sqr() * self.a_eig[i * n + i]).sum()
    }

    /// (1/T) ∫₀ᵀ value(t) dt by composite Gauss–Legendre.
    pub fn running_average(&self, t_total: f64, panels: usize, order: usize) -> f64 {
        composite_gauss_legendre(|t| self.value(t), 0.0, t_total, panels, order) / t_total
    }

    /// (1/T) ∫₀ᵀ value(t) dt in closed form.
    pub fn running_average_exact(&self, t_total: f64) -> f64 {
        let n = self.n();
        let mut acc = self.infinite_time_value();
        for i in 0..n {
            for k in (i + 1)..n {
                let w = (self.energies[i] - self.energies[k]) * t_total;
                let f = (Complex64::from_polar(1.0, w) - 1.0) / Complex64::new(0.0, w);
                acc += 2.0 * (self.phi[i].conj() * self.phi[k] * f).re * self.a_eig[i * n + k];
            }
        }
        acc
    }

    /// C with |running average(T) − infinite-time value| <= C / T.
    pub fn convergence_constant(&self) -> f64 {
        let n = self.n();
        let mut c = 0.0;
        for i in 0..n {
            for k in (i + 1)..n {
                let gap = (self.energies[i] - self.energies[k]).abs();
                c += 4.0 * (self.phi[i] * self.phi[k]).norm() * self.a_eig[i * n + k].abs() / gap;
            }
        }
        c
    }
}

/// Infinite-time average after a quench from unperturbed state e.
pub fn quench_time_average(system: &EigenSystem, e: usize, a: &Observable, edge_exclusion: f64) -> Result<f64> {
    let n = system.dim();
    if e >= n {
        return Err(Error::IndexOutOfRange { index: e, len: n });
    }
    let cut = (edge_exclusion * n as f64).floor() as usize;
    if e < cut || e >= n - cut {
        log::warn!("quench level {e} lies in the spectral edge zone (first/last {cut} levels)");
    }
    infinite_time_average(system, &StatePrep::basis(n, e)?, a)
}

/// Λ₂-weighted mean of the unperturbed diagonal around e, renormalized to the levels present.
pub fn lambda2_average(lambda2: &LagProfile, a: &Observable, e: usize) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..a.dim() {
        let w = lambda2.at(e as i64 - j as i64);
        if w != 0.0 {
            num += w * a.matrix.get(j, j);
            den += w;
        }
    }
    num / den
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuenchPrediction {
    pub value: f64,
    /// 2 Σ_i Λ(i - e)² ⟨i|A|i⟩₀.
    pub dropped_term: f64,
    pub dropped_ratio: f64,
}

pub fn quench_prediction(lambda: &LagProfile, a: &Observable, e: usize) -> Result<QuenchPrediction> {
    if e >= a.dim() {
        return Err(Error::IndexOutOfRange { index: e, len: a.dim() });
    }
    let lambda2 = convolve_envelope(lambda)?;
    let value = lambda2_average(&lambda2, a, e);
    let dropped: f64 = (0..a.dim())
        .map(|i| {
            let l = lambda.at(i as i64 - e as i64);
            2.0 * l * l * a.matrix.get(i, i)
        })
        .sum();
    Ok(QuenchPrediction {
        value,
        dropped_term: dropped,
        dropped_ratio: (dropped / value).abs(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeAverageReport {
    pub infinite_time_value: f64,
    pub diagonal_term: f64,
    pub interference_term: f64,
    pub bound_value: Option<f64>,
    pub prediction: Option<f64>,
}

impl TimeAverageReport {
    /// Fills the Schwarz bound and the Λ₂-smoothed prediction.
    pub fn with_envelope(mut self, psi: &StatePrep, lambda: &LagProfile, a: &Observable) -> Result<Self> {
        let lambda2 = convolve_envelope(lambda)?;
        self.bound_value = Some(interference_bound(psi, &lambda2, a)?);
        let prediction = psi
            .support()
            .iter()
            .map(|&nu| psi.amplitudes[nu].norm_sqr() * lambda2_average(&lambda2, a, nu))
            .sum();
        self.prediction = Some(prediction);
        Ok(self)
    }
}

/// Exact infinite-time average split into ν = μ and ν ≠ μ parts.
pub fn superposition_time_average(system: &EigenSystem, psi: &StatePrep, a: &Observable) -> Result<TimeAverageReport> {
    check(system, psi, a)?;
    let total = infinite_time_average(system, psi, a)?;
    let diag_a = all_expectations(system, a)?;
    let support = psi.support();
    let n = system.dim();
    let mut diagonal = 0.0;
    let mut interference = 0.0;
    for i in 0..n {
        let col = system.column(i);
        let d: f64 = support.iter().map(|&nu| psi.amplitudes[nu].norm_sqr() * col[nu] * col[nu]).sum();
        diagonal += d * diag_a[i];
        if support.len() <= EXPLICIT_PAIR_LIMIT {
            let mut cross = 0.0;
            for (x, &nu) in support.iter().enumerate() {
                for &mu in &support[x + 1..] {
                    cross += 2.0 * (psi.amplitudes[nu].conj() * psi.amplitudes[mu]).re * col[nu] * col[mu];
                }
            }
            interference += cross * diag_a[i];
        }
    }
    if support.len() > EXPLICIT_PAIR_LIMIT {
        interference = total - diagonal;
    }
    Ok(TimeAverageReport {
        infinite_time_value: total,
        diagonal_term: diagonal,
        interference_term: interference,
        bound_value: None,
        prediction: None,
    })
}

/// √Λ₂(0) · √(Σ_μ |Γ_μ|² (A²)_μμ).
pub fn interference_bound(psi: &StatePrep, lambda2: &LagProfile, a: &Observable) -> Result<f64> {
    if psi.dim() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: psi.dim(),
        });
    }
    let weighted: f64 = psi
        .amplitudes
        .iter()
        .zip(a.square_diagonal())
        .map(|(g, q)| g.norm_sqr() * q)
        .sum();
    Ok(lambda2.at(0).sqrt() * weighted.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::LorentzianParams;
    use crate::matrix::SymmetricMatrix;
    use crate::model::{build_unperturbed_spectrum, sample_hamiltonian, Jitter, PerturbationParams, Taper};
    use crate::observables::{eigenstate_expectation, make_observable, ObservableSpec, ProfileShape};
    use crate::spectra::diagonalize;
    use proptest::prelude::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn system(n: usize, eps: f64, band: usize, seed: u64) -> EigenSystem {
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
        diagonalize(&h).unwrap()
    }

    fn identity(n: usize) -> Observable {
        make_observable(&ObservableSpec::DiagonalProfile { shape: ProfileShape::Constant { value: 1.0 } }, n).unwrap()
    }

    #[test]
    fn test_state_prep_validation() {
        assert!(StatePrep::new(vec![c(1.0), c(1.0)]).is_err());
        let s = StatePrep::normalized(vec![c(1.0), c(1.0)]).unwrap();
        assert!((s.norm_sqr() - 1.0).abs() < 1e-15);
        assert!(StatePrep::normalized(vec![c(0.0)]).is_err());
    }

    #[test]
    fn test_eigenstate_and_identity() {
        let sys = system(40, 1.0, 10, 2);
        let a = Observable::banded_random(40, 2, 1.0, 5).unwrap();
        let psi = StatePrep::new(sys.column(17).iter().map(|&x| c(x)).collect()).unwrap();
        let v = infinite_time_average(&sys, &psi, &a).unwrap();
        assert!((v - eigenstate_expectation(&sys, &a, 17).unwrap()).abs() < 1e-12);
        let s0 = finite_time_expectation(&sys, &psi, &a, 0.0).unwrap();
        for t in [0.3, 7.0, 1e3] {
            assert!((finite_time_expectation(&sys, &psi, &a, t).unwrap() - s0).abs() < 1e-12);
        }
        let rand = StatePrep::normalized((0..40).map(|k| Complex64::new((k as f64).sin(), (k as f64 * 0.3).cos())).collect()).unwrap();
        assert!((infinite_time_average(&sys, &rand, &identity(40)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn test_time_zero_is_static_expectation() {
        let sys = system(30, 1.0, 8, 3);
        let a = Observable::banded_random(30, 3, 1.0, 1).unwrap();
        let psi = StatePrep::normalized((0..30).map(|k| Complex64::new(1.0 + k as f64, -0.5 * k as f64)).collect()).unwrap();
        let mut direct = Complex64::new(0.0, 0.0);
        for j in 0..30 {
            for k in 0..30 {
                direct += psi.amplitudes[j].conj() * a.matrix.get(j, k) * psi.amplitudes[k];
            }
        }
        assert!((finite_time_expectation(&sys, &psi, &a, 0.0).unwrap() - direct.re).abs() < 1e-12);
        let ev = TimeEvolver::new(&sys, &psi, &a).unwrap();
        for t in [0.0, 1.7, 40.0] {
            assert!((ev.value(t) - finite_time_expectation(&sys, &psi, &a, t).unwrap()).abs() < 1e-11);
        }
    }

    #[test]
    fn test_two_level_long_time_average() {
        let h = SymmetricMatrix::from_rows(&[vec![0.0, 0.1], vec![0.1, 1.0]]).unwrap();
        let sys = diagonalize(&h).unwrap();
        let psi = StatePrep::basis(2, 0).unwrap();
        let a = Observable::custom(SymmetricMatrix::from_diagonal(&[1.0, 0.0])).unwrap();
        let inf = infinite_time_average(&sys, &psi, &a).unwrap();
        // closed form: 1 - 2 sin²θ cos²θ with tan 2θ = 0.2
        let theta = 0.5 * (0.2f64).atan();
        let exact = 1.0 - 2.0 * (theta.sin() * theta.cos()).powi(2);
        assert!((inf - exact).abs() < 1e-12);
        let ev = TimeEvolver::new(&sys, &psi, &a).unwrap();
        let run = ev.running_average(1e4, 20_000, 16);
        assert!((run - inf).abs() < 1e-3);
        assert!((run - ev.running_average_exact(1e4)).abs() < 1e-10);
    }

    #[test]
    fn test_degenerate_spectrum_refused() {
        let sys = diagonalize(&SymmetricMatrix::from_diagonal(&[0.0, 1.0, 1.0])).unwrap();
        let psi = StatePrep::basis(3, 0).unwrap();
        assert!(matches!(
            infinite_time_average(&sys, &psi, &identity(3)),
            Err(Error::NearDegenerate { .. })
        ));
    }

    #[test]
    fn test_quench_trivial_cases() {
        let sys = system(50, 0.0, 5, 1);
        let a = Observable::banded_random(50, 2, 1.0, 9).unwrap();
        assert_eq!(quench_time_average(&sys, 25, &a, 0.1).unwrap(), a.matrix.get(25, 25));
        let sys = system(50, 1.0, 5, 1);
        assert!((quench_time_average(&sys, 25, &identity(50), 0.1).unwrap() - 1.0).abs() < 1e-12);
        assert!(quench_time_average(&sys, 50, &identity(50), 0.1).is_err());
        // edge index warns but still computes
        assert!(quench_time_average(&sys, 0, &identity(50), 0.1).is_ok());
    }

    #[test]
    fn test_quench_prediction_trivial_cases() {
        let a = Observable::banded_random(50, 0, 1.0, 9).unwrap();
        let p = quench_prediction(&LagProfile::delta(), &a, 20).unwrap();
        assert_eq!(p.value, a.matrix.get(20, 20));
        let k = make_observable(&ObservableSpec::DiagonalProfile { shape: ProfileShape::Constant { value: 2.5 } }, 200).unwrap();
        let env = LorentzianParams { amplitude: 1.0, half_width: 3.0 }.profile(60);
        assert!((quench_prediction(&env, &k, 100).unwrap().value - 2.5).abs() < 1e-12);
        assert!(quench_prediction(&LagProfile::from_fn(2, |_| 1.0), &k, 100).is_err());
    }

    #[test]
    fn test_dropped_term_small_for_wide_envelope() {
        let n = 1000;
        let a = make_observable(&ObservableSpec::DiagonalProfile { shape: ProfileShape::Linear }, n).unwrap();
        let env = LorentzianParams { amplitude: 2.0, half_width: 2.0 * std::f64::consts::PI }.profile(999);
        let p = quench_prediction(&env, &a, n / 2).unwrap();
        // 2ΣΛ² → 1/(πδ) for a unit-mass Lorentzian
        let expect = 1.0 / (std::f64::consts::PI * 2.0 * std::f64::consts::PI);
        assert!((p.dropped_ratio / expect - 1.0).abs() < 0.02, "{}", p.dropped_ratio);
        assert!(p.dropped_ratio < 0.06);
    }

    #[test]
    fn test_interference_bound_scaling() {
        let n = 2001;
        let a = Observable::banded_random(n, 1, 1.0, 2).unwrap();
        let mut amps = vec![c(0.0); n];
        amps[900] = c(0.6);
        amps[1100] = c(0.8);
        let psi = StatePrep::new(amps).unwrap();
        let l2 = |d: f64| LorentzianParams { amplitude: 1.0, half_width: d }.profile(1000);
        let b1 = interference_bound(&psi, &l2(20.0), &a).unwrap();
        let b2 = interference_bound(&psi, &l2(40.0), &a).unwrap();
        assert!((b1 / b2 - 2f64.sqrt()).abs() < 0.02, "{}", b1 / b2);
        let zero = Observable::custom(SymmetricMatrix::zeros(n)).unwrap();
        assert_eq!(interference_bound(&psi, &l2(20.0), &zero).unwrap(), 0.0);
    }

    #[test]
    fn test_single_component_superposition_is_quench() {
        let sys = system(60, 1.5, 15, 4);
        let a = Observable::banded_random(60, 1, 1.0, 3).unwrap();
        let r = superposition_time_average(&sys, &StatePrep::basis(60, 30).unwrap(), &a).unwrap();
        let q = quench_time_average(&sys, 30, &a, 0.1).unwrap();
        assert!((r.infinite_time_value - q).abs() < 1e-12);
        assert!((r.diagonal_term - q).abs() < 1e-12);
        assert_eq!(r.interference_term, 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn prop_decomposition_identity(seed in any::<u64>(), k in 2usize..6, phase in 0.0f64..6.28) {
            let sys = system(40, 1.2, 10, seed);
            let a = Observable::banded_random(40, 2, 1.0, seed ^ 1).unwrap();
            let amps: Vec<Complex64> = (0..40)
                .map(|j| if j % (40 / k) == 3 { Complex64::from_polar(1.0 + j as f64 / 40.0, phase * j as f64) } else { c(0.0) })
                .collect();
            let psi = StatePrep::normalized(amps).unwrap();
            let r = superposition_time_average(&sys, &psi, &a).unwrap();
            prop_assert!((r.diagonal_term + r.interference_term - r.infinite_time_value).abs() < 1e-10);
        }

        #[test]
        fn prop_running_average_within_c_over_t(seed in any::<u64>()) {
            let sys = system(12, 0.8, 4, seed);
            let a = Observable::banded_random(12, 2, 1.0, seed).unwrap();
            let psi = StatePrep::basis(12, 6).unwrap();
            let ev = TimeEvolver::new(&sys, &psi, &a).unwrap();
            let inf = ev.infinite_time_value();
            let cc = ev.convergence_constant();
            for t in [10.0, 100.0, 1000.0] {
                let dev = (ev.running_average_exact(t) - inf).abs();
                prop_assert!(dev <= cc / t * (1.0 + 1e-9));
            }
        }
    }
}
