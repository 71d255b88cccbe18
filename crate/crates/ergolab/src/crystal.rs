//! Harmonic-crystal oracle: acoustic modes Ω = c|k| on a periodic L^d lattice,
//! ⟨x²⟩ in occupation eigenstates, exact microcanonical sampling, the
//! steepest-descent correction to canonical averages, and energy-spread
//! additivity for product states.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::stats;

const MAX_ATTEMPTS: u64 = 200_000_000;
const ENUMERATION_LIMIT: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    /// Wave vector folded into (-π, π]^d.
    pub k: Vec<f64>,
    pub omega: f64,
    /// Squared coefficient a_ν² of the mode in x.
    pub a2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrystalSpec {
    pub dimension: usize,
    pub linear_size: usize,
    pub speed: f64,
    pub coefficient: f64,
    pub modes: Vec<Mode>,
}

impl CrystalSpec {
    pub fn sites(&self) -> usize {
        self.linear_size.pow(self.dimension as u32)
    }

    pub fn min_frequency(&self) -> f64 {
        self.modes.iter().map(|m| m.omega).fold(f64::INFINITY, f64::min)
    }

    pub fn max_frequency(&self) -> f64 {
        self.modes.iter().map(|m| m.omega).fold(0.0, f64::max)
    }

    /// (Ω_max - Ω_min) / (modes - 1), or Ω_min for a single mode.
    pub fn mean_mode_spacing(&self) -> f64 {
        let m = self.modes.len();
        if m < 2 {
            self.min_frequency()
        } else {
            (self.max_frequency() - self.min_frequency()) / (m - 1) as f64
        }
    }

    pub fn vacuum_x2(&self) -> f64 {
        self.modes.iter().map(|m| m.a2 / (2.0 * m.omega)).sum()
    }
}

pub fn build_crystal(d: usize, l: usize, c: f64) -> Result<CrystalSpec> {
    build_crystal_with(d, l, c, 1.0)
}

/// Modes k = 2π/L · m for m ∈ {0..L-1}^d \ {0}, a_ν = constant/√N.
pub fn build_crystal_with(d: usize, l: usize, c: f64, constant: f64) -> Result<CrystalSpec> {
    if !(1..=5).contains(&d) {
        return Err(Error::invalid(format!("dimension {d} outside 1..=5")));
    }
    if l < 2 {
        return Err(Error::invalid(format!("linear size {l} must be >= 2")));
    }
    if !(c > 0.0) || !(constant > 0.0) {
        return Err(Error::invalid("speed and coefficient must be positive"));
    }
    let n = l.checked_pow(d as u32).ok_or_else(|| Error::invalid("lattice too large"))?;
    let a2 = constant * constant / n as f64;
    let step = 2.0 * std::f64::consts::PI / l as f64;
    let mut modes = Vec::with_capacity(n - 1);
    let mut idx = vec![0usize; d];
    for _ in 0..n {
        if idx.iter().any(|&m| m != 0) {
            let k: Vec<f64> = idx
                .iter()
                .map(|&m| {
                    let folded = if 2 * m > l { m as f64 - l as f64 } else { m as f64 };
                    step * folded
                })
                .collect();
            let norm = k.iter().map(|x| x * x).sum::<f64>().sqrt();
            modes.push(Mode { k, omega: c * norm, a2 });
        }
        for slot in idx.iter_mut().rev() {
            *slot += 1;
            if *slot < l {
                break;
            }
            *slot = 0;
        }
    }
    Ok(CrystalSpec {
        dimension: d,
        linear_size: l,
        speed: c,
        coefficient: constant,
        modes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupationState {
    pub occupations: Vec<u64>,
    pub total_energy: f64,
}

impl OccupationState {
    pub fn new(spec: &CrystalSpec, occupations: Vec<u64>) -> Result<Self> {
        if occupations.len() != spec.modes.len() {
            return Err(Error::DimensionMismatch {
                expected: spec.modes.len(),
                found: occupations.len(),
            });
        }
        let total_energy = occupations.iter().zip(&spec.modes).map(|(&n, m)| n as f64 * m.omega).sum();
        Ok(Self {
            occupations,
            total_energy,
        })
    }

    pub fn ground(spec: &CrystalSpec) -> Self {
        Self {
            occupations: vec![0; spec.modes.len()],
            total_energy: 0.0,
        }
    }
}

/// Σ_ν a_ν² (n_ν + ½) / Ω_ν.
pub fn x2_expectation(spec: &CrystalSpec, occ: &OccupationState) -> Result<f64> {
    if occ.occupations.len() != spec.modes.len() {
        return Err(Error::DimensionMismatch {
            expected: spec.modes.len(),
            found: occ.occupations.len(),
        });
    }
    Ok(occ
        .occupations
        .iter()
        .zip(&spec.modes)
        .map(|(&n, m)| m.a2 * (n as f64 + 0.5) / m.omega)
        .sum())
}

fn bose(x: f64) -> f64 {
    1.0 / x.exp_m1()
}

/// Canonical mean energy above the ground state.
pub fn canonical_energy(spec: &CrystalSpec, beta: f64) -> f64 {
    spec.modes.iter().map(|m| m.omega * bose(beta * m.omega)).sum()
}

/// β with canonical energy equal to `energy`, by bisection in ln β.
pub fn solve_beta(spec: &CrystalSpec, energy: f64) -> Result<f64> {
    if !(energy > 0.0) || !energy.is_finite() {
        return Err(Error::SaddleNotBracketed(energy));
    }
    let (mut lo, mut hi) = (1.0f64, 1.0f64);
    while canonical_energy(spec, lo) < energy {
        lo *= 0.5;
        if lo < 1e-12 {
            return Err(Error::SaddleNotBracketed(energy));
        }
    }
    while canonical_energy(spec, hi) > energy {
        hi *= 2.0;
        if hi > 1e8 {
            return Err(Error::SaddleNotBracketed(energy));
        }
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if canonical_energy(spec, mid) > energy {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-15 {
            break;
        }
    }
    Ok((lo * hi).sqrt())
}

/// All occupation vectors with |E - target| <= tolerance, or None past `limit`.
pub fn enumerate_shell(spec: &CrystalSpec, target: f64, tolerance: f64, limit: usize) -> Option<Vec<Vec<u64>>> {
    fn walk(
        modes: &[Mode],
        k: usize,
        energy: f64,
        lo: f64,
        hi: f64,
        cur: &mut Vec<u64>,
        out: &mut Vec<Vec<u64>>,
        visited: &mut usize,
        limit: usize,
    ) -> bool {
        *visited += 1;
        if *visited > limit * 100 || out.len() > limit {
            return false;
        }
        if k == modes.len() {
            if energy >= lo && energy <= hi {
                out.push(cur.clone());
            }
            return true;
        }
        let mut n = 0u64;
        loop {
            let e = energy + n as f64 * modes[k].omega;
            if e > hi {
                break;
            }
            cur.push(n);
            let ok = walk(modes, k + 1, e, lo, hi, cur, out, visited, limit);
            cur.pop();
            if !ok {
                return false;
            }
            n += 1;
        }
        true
    }
    let mut out = Vec::new();
    let mut visited = 0;
    let ok = walk(
        &spec.modes,
        0,
        0.0,
        target - tolerance,
        target + tolerance,
        &mut Vec::new(),
        &mut out,
        &mut visited,
        limit,
    );
    ok.then_some(out)
}

/// Exact uniform sampler on the shell |E - target| <= tolerance: canonical Bose
/// proposals at the saddle β, accepted with probability e^{β(E - E_hi)}.
pub struct MicrocanonicalSampler<'a> {
    spec: &'a CrystalSpec,
    target: f64,
    hi: f64,
    lo: f64,
    beta: f64,
    /// ln q_ν = -β Ω_ν.
    log_q: Vec<f64>,
}

impl<'a> MicrocanonicalSampler<'a> {
    pub fn new(spec: &'a CrystalSpec, target: f64, tolerance: f64) -> Result<Self> {
        if !(target >= 0.0) || !target.is_finite() {
            return Err(Error::invalid(format!("target energy must be >= 0, got {target}")));
        }
        if !(tolerance > 0.0) {
            return Err(Error::invalid(format!("tolerance must be positive, got {tolerance}")));
        }
        let beta = if target > 0.0 { solve_beta(spec, target)? } else { f64::INFINITY };
        if spec.modes.len() <= 20 {
            if let Some(shell) = enumerate_shell(spec, target, tolerance, ENUMERATION_LIMIT) {
                if shell.is_empty() {
                    return Err(Error::Infeasible(format!(
                        "no occupation state within {tolerance} of E = {target}"
                    )));
                }
            }
        }
        Ok(Self {
            spec,
            target,
            hi: target + tolerance,
            lo: target - tolerance,
            beta,
            log_q: spec.modes.iter().map(|m| -beta * m.omega).collect(),
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn sample(&self, r: &mut Stream) -> Result<OccupationState> {
        let m = self.spec.modes.len();
        if self.target == 0.0 || self.lo <= 0.0 && self.beta.is_infinite() {
            return Ok(OccupationState::ground(self.spec));
        }
        let mut occ = vec![0u64; m];
        for _ in 0..MAX_ATTEMPTS {
            let mut energy = 0.0;
            let mut ok = true;
            for (k, mode) in self.spec.modes.iter().enumerate() {
                let u: f64 = 1.0 - r.random::<f64>();
                let n = (u.ln() / self.log_q[k]).floor();
                let n = if n.is_finite() { n as u64 } else { 0 };
                occ[k] = n;
                energy += n as f64 * mode.omega;
                if energy > self.hi {
                    ok = false;
                    break;
                }
            }
            if !ok || energy < self.lo {
                continue;
            }
            let accept = (self.beta * (energy - self.hi)).exp();
            if r.random::<f64>() < accept {
                return OccupationState::new(self.spec, occ);
            }
        }
        Err(Error::Infeasible(format!(
            "no acceptance within {MAX_ATTEMPTS} proposals for E = {}",
            self.target
        )))
    }
}

pub fn sample_microcanonical_occupations(spec: &CrystalSpec, target: f64, tolerance: f64, seed: u64) -> Result<OccupationState> {
    let sampler = MicrocanonicalSampler::new(spec, target, tolerance)?;
    sampler.sample(&mut rng::stream(seed))
}

/// `count` independent draws; draw k uses substream `seed ^ k`.
pub fn sample_microcanonical_ensemble(
    spec: &CrystalSpec,
    target: f64,
    tolerance: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<OccupationState>> {
    let sampler = MicrocanonicalSampler::new(spec, target, tolerance)?;
    (0..count)
        .into_par_iter()
        .map(|k| sampler.sample(&mut rng::realization_stream(seed, k)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub linear_size: usize,
    pub sites: usize,
    pub energy: f64,
    pub tolerance: f64,
    pub mean_x2: f64,
    pub variance: f64,
    pub relative_variance: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub dimension: usize,
    pub points: Vec<ScalingPoint>,
    /// Slope of ln(Var x² / ⟨x²⟩²) against ln N.
    pub exponent: f64,
    pub standard_error: f64,
}

pub fn measure_scaling_point(d: usize, l: usize, energy_per_site: f64, samples: usize, seed: u64) -> Result<ScalingPoint> {
    let spec = build_crystal(d, l, 1.0)?;
    let energy = energy_per_site * spec.sites() as f64;
    let tolerance = spec.mean_mode_spacing();
    let draws = sample_microcanonical_ensemble(&spec, energy, tolerance, samples, seed)?;
    let x2: Vec<f64> = draws.iter().map(|o| x2_expectation(&spec, o)).collect::<Result<_>>()?;
    let mean_x2 = stats::mean(&x2);
    let variance = stats::variance(&x2);
    Ok(ScalingPoint {
        linear_size: l,
        sites: spec.sites(),
        energy,
        tolerance,
        mean_x2,
        variance,
        relative_variance: variance / (mean_x2 * mean_x2),
        samples,
    })
}

pub fn x2_fluctuation_scaling(d: usize, sizes: &[usize], energy_per_site: f64, samples: usize, seed: u64) -> Result<ScalingFit> {
    if sizes.len() < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            found: sizes.len(),
        });
    }
    if samples < 100 {
        return Err(Error::InsufficientSamples {
            needed: 100,
            found: samples,
        });
    }
    let points: Vec<ScalingPoint> = sizes
        .iter()
        .enumerate()
        .map(|(k, &l)| measure_scaling_point(d, l, energy_per_site, samples, rng::realization_seed(seed, k << 32)))
        .collect::<Result<_>>()?;
    let n: Vec<f64> = points.iter().map(|p| p.sites as f64).collect();
    let y: Vec<f64> = points.iter().map(|p| p.relative_variance).collect();
    let fit = stats::log_log_fit(&n, &y);
    Ok(ScalingFit {
        dimension: d,
        points,
        exponent: fit.slope,
        standard_error: fit.slope_se,
    })
}

/// λF(λ) = -ln Z = Σ ln(1 - e^{-λΩ}).
pub fn log_partition_free_energy(spec: &CrystalSpec, lambda: f64) -> f64 {
    spec.modes.iter().map(|m| (-(-lambda * m.omega).exp()).ln_1p()).sum()
}

/// Canonical ⟨x²⟩ at inverse temperature λ.
pub fn canonical_x2(spec: &CrystalSpec, lambda: f64) -> f64 {
    spec.modes
        .iter()
        .map(|m| m.a2 * (bose(lambda * m.omega) + 0.5) / m.omega)
        .sum()
}

fn richardson(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (4.0 * f(h / 2.0) - f(h)) / 3.0
}

pub fn derivative1(f: &impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    richardson(|s| (f(x + s) - f(x - s)) / (2.0 * s), h)
}

pub fn derivative2(f: &impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    richardson(|s| (f(x + s) - 2.0 * f(x) + f(x - s)) / (s * s), h)
}

pub fn derivative3(f: &impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    richardson(
        |s| (f(x + 2.0 * s) - 2.0 * f(x + s) + 2.0 * f(x - s) - f(x - 2.0 * s)) / (2.0 * s * s * s),
        h,
    )
}

/// Microcanonical estimate from canonical data at the saddle:
/// g + ½ g''/F₂ − ½ (F₃/F₂²) g', with F = λF(λ) and g = ⟨A⟩_λ.
/// Returns the two correction terms.
pub fn steepest_descent_estimate(g1: f64, g2: f64, f2: f64, f3: f64) -> (f64, f64) {
    (0.5 * g2 / f2, -0.5 * f3 / (f2 * f2) * g1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalCorrection {
    pub beta: f64,
    pub canonical: f64,
    pub second_derivative_term: f64,
    pub third_derivative_term: f64,
    pub corrected: f64,
}

impl CanonicalCorrection {
    pub fn relative_correction(&self) -> f64 {
        ((self.second_derivative_term + self.third_derivative_term) / self.canonical).abs()
    }
}

pub fn canonical_correction(spec: &CrystalSpec, target: f64) -> Result<CanonicalCorrection> {
    let beta = solve_beta(spec, target)?;
    let lf = |l: f64| log_partition_free_energy(spec, l);
    let g = |l: f64| canonical_x2(spec, l);
    let h2 = 0.02 * beta;
    let h3 = 0.05 * beta;
    let f2 = derivative2(&lf, beta, h2);
    let f3 = derivative3(&lf, beta, h3);
    let g1 = derivative1(&g, beta, h2);
    let g2 = derivative2(&g, beta, h2);
    let canonical = g(beta);
    let (second, third) = steepest_descent_estimate(g1, g2, f2, f3);
    Ok(CanonicalCorrection {
        beta,
        canonical,
        second_derivative_term: second,
        third_derivative_term: third,
        corrected: canonical + second + third,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeState {
    pub omega: f64,
    /// Amplitudes over levels n = 0, 1, 2, ...
    pub amplitudes: Vec<Complex64>,
}

impl ModeState {
    fn moments(&self) -> (f64, f64) {
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for (n, a) in self.amplitudes.iter().enumerate() {
            let e = self.omega * n as f64;
            let p = a.norm_sqr();
            m1 += p * e;
            m2 += p * e * e;
        }
        (m1, m2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpreadReport {
    pub total_variance: f64,
    pub per_mode: Vec<f64>,
    pub mean_energy: f64,
}

/// ΔE² of the product state against the per-mode variances.
pub fn energy_spread_additivity(mode_states: &[ModeState]) -> Result<SpreadReport> {
    for s in mode_states {
        let norm: f64 = s.amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::Unnormalized { sum: norm });
        }
    }
    let moments: Vec<(f64, f64)> = mode_states.iter().map(|s| s.moments()).collect();
    let per_mode: Vec<f64> = moments.iter().map(|(m1, m2)| m2 - m1 * m1).collect();
    let dims: f64 = mode_states.iter().map(|s| s.amplitudes.len() as f64).product();
    let (mean, second) = if dims <= 65_536.0 {
        product_moments_enumerated(mode_states)
    } else {
        // ⟨H²⟩ = Σ⟨h²⟩ + Σ_{ν≠μ}⟨h_ν⟩⟨h_μ⟩ for a product state
        let s1: f64 = moments.iter().map(|m| m.0).sum();
        let s11: f64 = moments.iter().map(|m| m.0 * m.0).sum();
        let s2: f64 = moments.iter().map(|m| m.1).sum();
        (s1, s2 + s1 * s1 - s11)
    };
    Ok(SpreadReport {
        total_variance: second - mean * mean,
        per_mode,
        mean_energy: mean,
    })
}

fn product_moments_enumerated(states: &[ModeState]) -> (f64, f64) {
    let mut idx = vec![0usize; states.len()];
    let (mut m1, mut m2) = (0.0, 0.0);
    loop {
        let mut p = 1.0;
        let mut e = 0.0;
        for (s, &n) in states.iter().zip(&idx) {
            p *= s.amplitudes[n].norm_sqr();
            e += s.omega * n as f64;
        }
        m1 += p * e;
        m2 += p * e * e;
        let mut k = states.len();
        loop {
            if k == 0 {
                return (m1, m2);
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < states[k].amplitudes.len() {
                break;
            }
            idx[k] = 0;
        }
    }
}
