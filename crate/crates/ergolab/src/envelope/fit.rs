//! Least-squares Lorentzian fit A/(r² + δ²) by Levenberg–Marquardt in log parameters.

use serde::{Deserialize, Serialize};

use super::{EnvelopeEstimate, LagProfile, LorentzianParams};
use crate::error::{Error, Result};

/// The fit window always covers at least this many lags on each side.
pub const MIN_FIT_HALF_RANGE: f64 = 5.0;
const MAX_ITERATIONS: usize = 500;
const NORMALIZATION_SLACK: f64 = 0.05;
const POOR_RELATIVE_RESIDUAL: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    LeastSquares,
    Moment,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitRegime {
    Lorentzian,
    /// Fit is poor or violates πA/δ ≈ 1; the weak-coupling tail applies instead.
    Perturbative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    pub amplitude: f64,
    pub half_width: f64,
    /// Sum of squared deviations over the fit window.
    pub residual: f64,
    /// sqrt(residual / Σ y²).
    pub relative_residual: f64,
    pub method: FitMethod,
    /// 1 / (π Λ̂(0)).
    pub moment_half_width: f64,
    pub fit_half_range: f64,
    pub lags_used: usize,
    pub iterations: usize,
}

impl LorentzianFit {
    pub fn params(&self) -> LorentzianParams {
        LorentzianParams {
            amplitude: self.amplitude,
            half_width: self.half_width,
        }
    }

    pub fn normalization(&self) -> f64 {
        std::f64::consts::PI * self.amplitude / self.half_width
    }

    pub fn regime(&self) -> FitRegime {
        if (self.normalization() - 1.0).abs() <= NORMALIZATION_SLACK
            && self.relative_residual <= POOR_RELATIVE_RESIDUAL
        {
            FitRegime::Lorentzian
        } else {
            FitRegime::Perturbative
        }
    }

    pub fn profile(&self, half_range: i64) -> LagProfile {
        self.params().profile(half_range)
    }
}

/// Fits over |r| <= max(range_multiple · initial δ, MIN_FIT_HALF_RANGE).
pub fn fit_lorentzian(
    estimate: &EnvelopeEstimate,
    initial: LorentzianParams,
    range_multiple: f64,
) -> Result<LorentzianFit> {
    let half_range = (range_multiple * initial.half_width).max(MIN_FIT_HALF_RANGE);
    let mask: Vec<bool> = estimate.counts.iter().map(|&c| c > 0).collect();
    fit_lorentzian_profile(&estimate.profile, Some(&mask), initial, half_range)
}

/// Fits a lag profile over |r| <= half_range, skipping lags whose mask entry is false.
pub fn fit_lorentzian_profile(
    profile: &LagProfile,
    mask: Option<&[bool]>,
    initial: LorentzianParams,
    half_range: f64,
) -> Result<LorentzianFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, r) in profile.lags().enumerate() {
        if (r as f64).abs() > half_range {
            continue;
        }
        if let Some(m) = mask {
            if !m[k] {
                continue;
            }
        }
        xs.push(r as f64);
        ys.push(profile.values[k]);
    }
    if xs.len() < 8 {
        return Err(Error::InsufficientSamples {
            needed: 8,
            found: xs.len(),
        });
    }
    let peak = profile.at(0);
    let moment_half_width = 1.0 / (std::f64::consts::PI * peak);

    let mut a0 = initial.amplitude;
    let mut d0 = initial.half_width;
    if !(a0 > 0.0 && d0 > 0.0) {
        // fall back to the moment estimate when no usable prior is given
        d0 = if moment_half_width.is_finite() { moment_half_width } else { 1.0 };
        a0 = peak.max(1e-12) * d0 * d0;
    }
    let sum_y2: f64 = ys.iter().map(|y| y * y).sum();

    let eval = |p: [f64; 2]| -> f64 {
        let (a, d) = (p[0].exp(), p[1].exp());
        xs.iter()
            .zip(&ys)
            .map(|(x, y)| {
                let e = a / (x * x + d * d) - y;
                e * e
            })
            .sum()
    };

    let mut p = [a0.ln(), d0.ln()];
    let mut cost = eval(p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (a, d) = (p[0].exp(), p[1].exp());
        // normal equations JᵀJ Δ = -Jᵀ e
        let (mut j11, mut j12, mut j22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (x, y) in xs.iter().zip(&ys) {
            let den = x * x + d * d;
            let m = a / den;
            let e = m - y;
            let da = m;
            let dd = -2.0 * d * d * a / (den * den);
            j11 += da * da;
            j12 += da * dd;
            j22 += dd * dd;
            g1 += da * e;
            g2 += dd * e;
        }
        let mut improved = false;
        while lambda < 1e16 {
            let b11 = j11 * (1.0 + lambda);
            let b22 = j22 * (1.0 + lambda);
            let det = b11 * b22 - j12 * j12;
            if det == 0.0 || !det.is_finite() {
                lambda *= 10.0;
                continue;
            }
            let s1 = -(b22 * g1 - j12 * g2) / det;
            let s2 = -(b11 * g2 - j12 * g1) / det;
            let trial = [p[0] + s1, p[1] + s2];
            let c = eval(trial);
            if c.is_finite() && c <= cost {
                let small = s1.abs().max(s2.abs()) < 1e-12;
                let flat = cost - c <= 1e-15 * cost.max(f64::MIN_POSITIVE);
                p = trial;
                cost = c;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if small || flat {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // no downhill step at any damping: stationary to working precision
            converged = true;
        }
        if converged {
            break;
        }
    }
    let (amplitude, half_width) = (p[0].exp(), p[1].exp());
    if !converged {
        return Err(Error::FitNotConverged {
            iterations,
            amplitude,
            half_width,
            residual: cost,
        });
    }
    Ok(LorentzianFit {
        amplitude,
        half_width,
        residual: cost,
        relative_residual: if sum_y2 > 0.0 { (cost / sum_y2).sqrt() } else { 0.0 },
        method: FitMethod::LeastSquares,
        moment_half_width,
        fit_half_range: half_range,
        lags_used: xs.len(),
        iterations,
    })
}
