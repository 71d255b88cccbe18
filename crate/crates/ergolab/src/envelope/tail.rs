//! Tail integral of Λ₂ weighted by an exponentially growing density of states,
//! ∫_{T/2}^{E_max} e^{x/T} Λ₂(x) dx with Λ₂ a unit-mass Lorentzian of
//! half-width 2δ (energies in units of Δ), against the bound (8/π) δ e^{E_max/T}.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::simpson;

const MAX_EXPONENT: f64 = 700.0;
const INTERVALS: usize = 20_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailBoundReport {
    pub delta: f64,
    pub t_cut: f64,
    pub e_max: f64,
    pub integral: f64,
    pub bound: f64,
    pub holds: bool,
    /// Grid location of the integrand's local maximum on [0, T].
    pub peak_location: f64,
    /// 2δ²/T.
    pub predicted_peak: f64,
    /// T − √(T² − 4δ²), the exact stationary point (NaN when T <= 2δ).
    pub exact_peak: f64,
    pub resolution: f64,
}

fn integrand(x: f64, delta: f64, t: f64) -> f64 {
    let w = 2.0 * delta;
    (x / t).exp() * w / (std::f64::consts::PI * (x * x + w * w))
}

pub fn tail_integral_bound(delta: f64, t_cut: f64, e_max: f64) -> Result<TailBoundReport> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::invalid(format!("half-width must be >= 0, got {delta}")));
    }
    if !(t_cut > 0.0) || !t_cut.is_finite() {
        return Err(Error::invalid(format!("T must be positive, got {t_cut}")));
    }
    if !e_max.is_finite() || e_max / t_cut > MAX_EXPONENT {
        return Err(Error::invalid(format!("E_max = {e_max} diverges against T = {t_cut}")));
    }
    if !(e_max > t_cut / 2.0) {
        return Err(Error::invalid(format!("E_max = {e_max} must exceed T/2 = {}", t_cut / 2.0)));
    }
    let bound = 8.0 / std::f64::consts::PI * delta * (e_max / t_cut).exp();
    let resolution = t_cut / 1000.0;
    if delta == 0.0 {
        return Ok(TailBoundReport {
            delta,
            t_cut,
            e_max,
            integral: 0.0,
            bound,
            holds: true,
            peak_location: 0.0,
            predicted_peak: 0.0,
            exact_peak: 0.0,
            resolution,
        });
    }
    let integral = simpson(|x| integrand(x, delta, t_cut), t_cut / 2.0, e_max, INTERVALS);
    let steps = 1000;
    let mut peak_location = 0.0;
    let mut best = integrand(0.0, delta, t_cut);
    for k in 1..=steps {
        let x = resolution * k as f64;
        let v = integrand(x, delta, t_cut);
        if v > best {
            best = v;
            peak_location = x;
        } else {
            break;
        }
    }
    let disc = t_cut * t_cut - 4.0 * delta * delta;
    Ok(TailBoundReport {
        delta,
        t_cut,
        e_max,
        integral,
        bound,
        holds: integral <= bound,
        peak_location,
        predicted_peak: 2.0 * delta * delta / t_cut,
        exact_peak: if disc > 0.0 { t_cut - disc.sqrt() } else { f64::NAN },
        resolution,
    })
}
