//! Direct minimization of the per-row variational free energy
//!
//!   F(Λ) = β [Σ r²Λ(r) − (Σ rΛ(r))²] + ¼ Σ_s ln Λ₂(s) − ½ Σ_r ln Λ(r),   β = Δ²/2ε²
//!
//! over translation-invariant envelopes with Σ Λ = 1. The first bracket is the
//! bias energy once the column-sum constraint is imposed; Λ₂ is the
//! autocorrelation of Λ. Lags live on a ring of 2R + 1 sites (minimal-image r)
//! so the repulsion sum has no boundary. Updates are mirror-descent steps in
//! the Burg geometry of −½ Σ ln Λ (1/Λ' = 1/Λ + η(g − μ)), with backtracking
//! on η, which keeps Λ positive and F monotone.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{predicted_params, LagProfile};
use crate::error::{Error, Result};

/// η = 2 solves the entropy-plus-diagonal part exactly in one step.
const MAX_STEP: f64 = 2.0;
const START_FLOOR: f64 = 1e-12;
/// Stationarity accepted once F no longer decreases in floating point.
const STALL_TOLERANCE: f64 = 1e-5;


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalProblem {
    pub epsilon: f64,
    pub delta_spacing: f64,
    /// Lags run over -R..=R.
    pub half_range: usize,
    pub include_repulsion: bool,
    /// Off: the bias energy is a constant and drops out.
    pub include_incompressibility: bool,
    /// Starting envelope on -R..=R; a Gaussian of width δ_pred when absent.
    pub initial: Option<Vec<f64>>,
    pub max_iterations: usize,
    /// Stop when max_r Λ(r)|g(r) − ⟨g⟩| falls below this.
    pub tolerance: f64,
}

impl VariationalProblem {
    /// Grid half-range of `grid_multiple` predicted widths.
    pub fn new(epsilon: f64, delta_spacing: f64, grid_multiple: f64) -> Result<Self> {
        let pred = predicted_params(epsilon, delta_spacing)?;
        if !(pred.half_width > 0.0) {
            return Err(Error::invalid("variational problem needs epsilon > 0"));
        }
        Ok(Self {
            epsilon,
            delta_spacing,
            half_range: (grid_multiple * pred.half_width).ceil() as usize,
            include_repulsion: true,
            include_incompressibility: true,
            initial: None,
            max_iterations: 200_000,
            tolerance: 1e-9,
        })
    }

    fn beta(&self) -> f64 {
        if self.include_incompressibility {
            self.delta_spacing * self.delta_spacing / (2.0 * self.epsilon * self.epsilon)
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalSolution {
    pub profile: LagProfile,
    pub free_energy: f64,
    pub iterations: usize,
    pub stationarity: f64,
    /// F after every accepted step.
    pub history: Vec<f64>,
}

struct Ring {
    n: usize,
    r2: Vec<f64>,
    r1: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Ring {
    fn new(half_range: usize) -> Self {
        let n = 2 * half_range + 1;
        let mut planner = FftPlanner::new();
        let r1: Vec<f64> = (0..n)
            .map(|k| if k <= half_range { k as f64 } else { k as f64 - n as f64 })
            .collect();
        Self {
            n,
            r2: r1.iter().map(|r| r * r).collect(),
            r1,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    fn spectrum(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        buf
    }

    fn inverse_real(&self, mut buf: Vec<Complex64>) -> Vec<f64> {
        self.inv.process(&mut buf);
        let scale = 1.0 / self.n as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }

    /// Circular autocorrelation Σ_t x(t) x(t + s).
    fn autocorrelation(&self, x: &[f64]) -> (Vec<f64>, Vec<Complex64>) {
        let fx = self.spectrum(x);
        let power = fx.iter().map(|c| Complex64::new(c.norm_sqr(), 0.0)).collect();
        (self.inverse_real(power), fx)
    }

    fn evaluate(&self, lam: &[f64], beta: f64, repulsion: bool) -> (f64, Option<(Vec<f64>, Vec<Complex64>)>) {
        let m1: f64 = lam.iter().zip(&self.r1).map(|(l, r)| l * r).sum();
        let m2: f64 = lam.iter().zip(&self.r2).map(|(l, r)| l * r).sum();
        let entropy: f64 = 0.5 * lam.iter().map(|l| l.ln()).sum::<f64>();
        let mut f = beta * (m2 - m1 * m1) - entropy;
        let mut extra = None;
        if repulsion {
            let (c, fx) = self.autocorrelation(lam);
            let c: Vec<f64> = c.into_iter().map(|v| v.max(f64::MIN_POSITIVE)).collect();
            f += 0.25 * c.iter().map(|v| v.ln()).sum::<f64>();
            extra = Some((c, fx));
        }
        (f, extra)
    }

    fn gradient(&self, lam: &[f64], beta: f64, extra: &Option<(Vec<f64>, Vec<Complex64>)>) -> Vec<f64> {
        let m1: f64 = lam.iter().zip(&self.r1).map(|(l, r)| l * r).sum();
        let mut g: Vec<f64> = (0..self.n)
            .map(|k| beta * (self.r2[k] - 2.0 * m1 * self.r1[k]) - 0.5 / lam[k])
            .collect();
        if let Some((c, fx)) = extra {
            // ∂/∂Λ(u) of ¼ Σ_s ln C(s) = ½ Σ_s Λ(u + s) / C(s)
            let w: Vec<f64> = c.iter().map(|v| 1.0 / v).collect();
            let fw = self.spectrum(&w);
            let prod = fw.iter().zip(fx).map(|(a, b)| a * b).collect();
            let conv = self.inverse_real(prod);
            for (gk, ck) in g.iter_mut().zip(conv) {
                *gk += 0.5 * ck;
            }
        }
        g
    }
}

fn wrapped_from_lags(values: &[f64], half_range: usize) -> Vec<f64> {
    let n = 2 * half_range + 1;
    let mut out = vec![0.0; n];
    for (k, v) in values.iter().enumerate() {
        let r = k as i64 - half_range as i64;
        out[r.rem_euclid(n as i64) as usize] = *v;
    }
    out
}

fn lags_from_wrapped(wrapped: &[f64], half_range: usize) -> LagProfile {
    let n = wrapped.len() as i64;
    let h = half_range as i64;
    LagProfile {
        min_lag: -h,
        values: (-h..=h).map(|r| wrapped[r.rem_euclid(n) as usize]).collect(),
    }
}

fn project(lam: &mut [f64]) {
    let s: f64 = lam.iter().sum();
    for v in lam.iter_mut() {
        *v /= s;
    }
}

/// Λ'_k = 1/(1/Λ_k + η g_k − s) with s fixed by Σ Λ' = 1. Returns false when
/// the step leaves the positive cone numerically.
fn burg_step(lam: &[f64], g: &[f64], eta: f64, out: &mut [f64]) -> bool {
    let a: Vec<f64> = lam.iter().zip(g).map(|(l, gk)| 1.0 / l + eta * gk).collect();
    let a_min = a.iter().cloned().fold(f64::INFINITY, f64::min);
    if !a_min.is_finite() {
        return false;
    }
    // φ(t) = Σ 1/(a_k − a_min + t) is convex and decreasing with φ(1) >= 1,
    // so Newton from t = 1 climbs monotonically to the root.
    let mut t = 1.0;
    for _ in 0..200 {
        let (mut phi, mut dphi) = (0.0, 0.0);
        for ak in &a {
            let w = 1.0 / (ak - a_min + t);
            phi += w;
            dphi -= w * w;
        }
        let step = (phi - 1.0) / dphi;
        t -= step;
        if step.abs() <= 1e-15 * t {
            break;
        }
    }
    for (o, ak) in out.iter_mut().zip(&a) {
        *o = 1.0 / (ak - a_min + t);
    }
    project(out);
    out.iter().all(|v| *v > 0.0 && v.is_finite())
}

/// F for a profile on -R..=R (normalized by the caller).
pub fn free_energy(problem: &VariationalProblem, profile: &LagProfile) -> Result<f64> {
    let r = problem.half_range;
    if profile.min_lag != -(r as i64) || profile.values.len() != 2 * r + 1 {
        return Err(Error::DimensionMismatch {
            expected: 2 * r + 1,
            found: profile.values.len(),
        });
    }
    let ring = Ring::new(r);
    let lam = wrapped_from_lags(&profile.values, r);
    Ok(ring.evaluate(&lam, problem.beta(), problem.include_repulsion).0)
}

pub fn minimize_free_energy(problem: &VariationalProblem) -> Result<VariationalSolution> {
    let pred = predicted_params(problem.epsilon, problem.delta_spacing)?;
    if !(pred.half_width > 0.0) {
        return Err(Error::invalid("variational problem needs epsilon > 0"));
    }
    if ((2 * problem.half_range) as f64) < 20.0 * pred.half_width {
        return Err(Error::invalid(format!(
            "lag grid -{0}..={0} spans fewer than 20 predicted widths ({1})",
            problem.half_range, pred.half_width
        )));
    }
    let r = problem.half_range;
    let n = 2 * r + 1;
    let start: Vec<f64> = match &problem.initial {
        Some(v) => {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) || !(v.iter().sum::<f64>() > 0.0) {
                return Err(Error::Infeasible("initial envelope must be nonnegative with positive mass".into()));
            }
            v.clone()
        }
        None => {
            let s = pred.half_width;
            (0..n)
                .map(|k| {
                    let x = k as f64 - r as f64;
                    (-0.5 * x * x / (s * s)).exp()
                })
                .collect()
        }
    };
    let ring = Ring::new(r);
    let beta = problem.beta();
    let mut lam = wrapped_from_lags(&start, r);
    let peak = lam.iter().cloned().fold(0.0, f64::max);
    for v in lam.iter_mut() {
        *v = v.max(START_FLOOR * peak);
    }
    project(&mut lam);
    let (mut f, mut extra) = ring.evaluate(&lam, beta, problem.include_repulsion);
    let mut history = vec![f];
    let mut eta = 1.0;
    let mut iterations = 0;
    let mut stationarity = f64::INFINITY;
    let mut trial = vec![0.0; n];
    let mut stalled = false;
    while iterations < problem.max_iterations {
        let g = ring.gradient(&lam, beta, &extra);
        let mean_g: f64 = lam.iter().zip(&g).map(|(l, gk)| l * gk).sum();
        stationarity = lam
            .iter()
            .zip(&g)
            .fold(0.0f64, |m, (l, gk)| m.max((l * (gk - mean_g)).abs()));
        if stationarity < problem.tolerance {
            break;
        }
        iterations += 1;
        let mut accepted = false;
        while eta > 1e-20 {
            if burg_step(&lam, &g, eta, &mut trial) {
                let (ft, et) = ring.evaluate(&trial, beta, problem.include_repulsion);
                if ft.is_finite() && ft <= f {
                    std::mem::swap(&mut lam, &mut trial);
                    f = ft;
                    extra = et;
                    history.push(f);
                    accepted = true;
                    eta = (eta * 1.5).min(MAX_STEP);
                    break;
                }
            }
            eta *= 0.5;
        }
        if !accepted {
            // no decrease at any step size: F is flat to working precision
            stalled = true;
            break;
        }
    }
    let converged = stationarity < problem.tolerance || (stalled && stationarity < STALL_TOLERANCE);
    if !converged {
        return Err(Error::MinimizerNotConverged {
            iterations,
            free_energy: f,
            stationarity,
        });
    }
    Ok(VariationalSolution {
        profile: lags_from_wrapped(&lam, r),
        free_energy: f,
        iterations,
        stationarity,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::{fit_lorentzian_profile, LorentzianParams};

    /// O(N²) ring evaluation used as an independent oracle.
    fn direct_free_energy(values: &[f64], half_range: usize, beta: f64, repulsion: bool) -> f64 {
        let n = values.len() as i64;
        let h = half_range as i64;
        let at = |r: i64| values[(r + h).rem_euclid(n) as usize];
        let img = |r: i64| {
            let m = r.rem_euclid(n);
            if m > h { m - n } else { m }
        };
        let m1: f64 = (-h..=h).map(|r| at(r) * r as f64).sum();
        let m2: f64 = (-h..=h).map(|r| at(r) * (r * r) as f64).sum();
        let mut f = beta * (m2 - m1 * m1) - 0.5 * (-h..=h).map(|r| at(r).ln()).sum::<f64>();
        if repulsion {
            for s in -h..=h {
                let c: f64 = (-h..=h).map(|t| at(t) * at(img(t + s))).sum();
                f += 0.25 * c.ln();
            }
        }
        f
    }

    #[test]
    fn test_fft_energy_matches_direct_sum() {
        let mut p = VariationalProblem::new(1.0, 1.0, 20.0).unwrap();
        let r = p.half_range;
        let prof = LagProfile::from_fn(r as i64, |x| 1.0 / (1.0 + 0.3 * (x * x) as f64 + 0.01 * x as f64)).normalized();
        for rep in [true, false] {
            p.include_repulsion = rep;
            let fast = free_energy(&p, &prof).unwrap();
            let slow = direct_free_energy(&prof.values, r, p.beta(), rep);
            assert!((fast - slow).abs() < 1e-9 * slow.abs().max(1.0), "{fast} vs {slow}");
        }
    }

    #[test]
    fn test_gradient_matches_finite_differences() {
        let p = VariationalProblem::new(1.0, 1.0, 20.0).unwrap();
        let r = p.half_range;
        let ring = Ring::new(r);
        let prof = LagProfile::from_fn(r as i64, |x| 1.0 / (2.0 + (x * x) as f64)).normalized();
        let lam = wrapped_from_lags(&prof.values, r);
        let (_, extra) = ring.evaluate(&lam, p.beta(), true);
        let g = ring.gradient(&lam, p.beta(), &extra);
        for k in [0usize, 1, 5, 17] {
            let h = 1e-7 * lam[k];
            let mut up = lam.clone();
            up[k] += h;
            let mut dn = lam.clone();
            dn[k] -= h;
            let fd = (ring.evaluate(&up, p.beta(), true).0 - ring.evaluate(&dn, p.beta(), true).0) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-4 * g[k].abs().max(1.0), "k={k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn test_minimizer_is_normalized_and_monotone() {
        let sol = minimize_free_energy(&VariationalProblem::new(1.0, 1.0, 40.0).unwrap()).unwrap();
        assert!((sol.profile.sum() - 1.0).abs() < 1e-8);
        assert!(sol.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(sol.profile.values.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn test_without_repulsion_matches_closed_form() {
        // stationarity of β r² − ½ ln Λ gives a Lorentzian of half-width πε²/Δ²
        let mut p = VariationalProblem::new(1.0, 1.0, 40.0).unwrap();
        p.include_repulsion = false;
        let sol = minimize_free_energy(&p).unwrap();
        let target = std::f64::consts::PI;
        let f = fit_lorentzian_profile(
            &sol.profile,
            None,
            LorentzianParams { amplitude: 1.0, half_width: 2.0 },
            5.0 * target / 2.0,
        )
        .unwrap();
        assert!((f.half_width / target - 1.0).abs() < 0.05, "{}", f.half_width);
    }

    #[test]
    fn test_no_incompressibility_no_repulsion_is_flat() {
        let mut p = VariationalProblem::new(1.0, 1.0, 20.0).unwrap();
        p.include_repulsion = false;
        p.include_incompressibility = false;
        let sol = minimize_free_energy(&p).unwrap();
        let u = 1.0 / sol.profile.values.len() as f64;
        assert!(sol.profile.values.iter().all(|v| (v - u).abs() < 1e-9));
    }

    #[test]
    fn test_starting_point_independence() {
        let p = VariationalProblem::new(1.0, 1.0, 30.0).unwrap();
        let a = minimize_free_energy(&p).unwrap();
        let mut q = p.clone();
        q.initial = Some(vec![1.0; 2 * p.half_range + 1]);
        let b = minimize_free_energy(&q).unwrap();
        assert!((a.free_energy - b.free_energy).abs() < 1e-8 * a.free_energy.abs());
    }

    #[test]
    fn test_infeasible_start_and_small_grid() {
        let mut p = VariationalProblem::new(1.0, 1.0, 20.0).unwrap();
        p.initial = Some(vec![0.0; 2 * p.half_range + 1]);
        assert!(matches!(minimize_free_energy(&p), Err(Error::Infeasible(_))));
        let mut q = VariationalProblem::new(1.0, 1.0, 20.0).unwrap();
        q.half_range = 3;
        assert!(minimize_free_energy(&q).is_err());
    }
}
