//! Two-body matrix elements ⟨E|V|E′⟩ in a small gas of identical bosons or
//! fermions, and their decay with the gap E − E′ at a temperature read off the
//! discrete many-body density of states.

use std::collections::HashMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

pub const BASIS_LIMIT: usize = 200_000;
const MIN_BIN_COUNT: usize = 5;
const MIN_BINS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Statistics {
    /// `cap` limits the occupation of any level; None means no cap.
    Boson { cap: Option<u32> },
    Fermion,
}

impl Statistics {
    fn max_occupation(&self, particles: usize) -> u32 {
        match *self {
            Statistics::Boson { cap } => cap.unwrap_or(u32::MAX).min(particles as u32),
            Statistics::Fermion => 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FockSystem {
    pub levels: Vec<f64>,
    pub particles: usize,
    pub statistics: Statistics,
    /// Occupation vectors in lexicographic order (level 0 most significant).
    pub basis: Vec<Vec<u32>>,
    pub energies: Vec<f64>,
    index: HashMap<Vec<u32>, usize>,
}

/// e_i = spacing · i.
pub fn equally_spaced_levels(m: usize, spacing: f64) -> Vec<f64> {
    (0..m).map(|i| spacing * i as f64).collect()
}

fn count_states(m: usize, p: usize, cap: u32, limit: usize) -> Option<usize> {
    // ways[k] over levels processed so far, saturating at limit + 1
    let mut ways = vec![0usize; p + 1];
    ways[0] = 1;
    for _ in 0..m {
        let mut next = vec![0usize; p + 1];
        for (k, &w) in ways.iter().enumerate() {
            if w == 0 {
                continue;
            }
            for n in 0..=(cap as usize).min(p - k) {
                next[k + n] = (next[k + n] + w).min(limit + 1);
            }
        }
        ways = next;
    }
    (ways[p] <= limit).then_some(ways[p])
}

pub fn build_fock_system(levels: Vec<f64>, particles: usize, statistics: Statistics) -> Result<FockSystem> {
    let m = levels.len();
    if m == 0 || particles == 0 {
        return Err(Error::invalid("need at least one level and one particle"));
    }
    if levels.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite("single-particle levels"));
    }
    let cap = statistics.max_occupation(particles);
    let size = count_states(m, particles, cap, BASIS_LIMIT).ok_or(Error::BasisTooLarge {
        size: BASIS_LIMIT + 1,
        limit: BASIS_LIMIT,
    })?;
    if size == 0 {
        return Err(Error::Infeasible(format!("no states for {particles} particles in {m} levels")));
    }
    let mut basis = Vec::with_capacity(size);
    let mut cur = vec![0u32; m];
    fill(0, particles as u32, cap, &mut cur, &mut basis);
    // fill walks occupations from high to low at each level; flip to ascending
    basis.reverse();
    let energies = basis
        .iter()
        .map(|occ| occ.iter().zip(&levels).map(|(&n, e)| n as f64 * e).sum())
        .collect();
    let index = basis.iter().enumerate().map(|(i, o)| (o.clone(), i)).collect();
    Ok(FockSystem {
        levels,
        particles,
        statistics,
        basis,
        energies,
        index,
    })
}

fn fill(level: usize, left: u32, cap: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if level + 1 == cur.len() {
        if left <= cap {
            cur[level] = left;
            out.push(cur.clone());
        }
        return;
    }
    for n in (0..=left.min(cap)).rev() {
        cur[level] = n;
        fill(level + 1, left - n, cap, cur, out);
    }
    cur[level] = 0;
}

impl FockSystem {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn index_of(&self, occupations: &[u32]) -> Option<usize> {
        self.index.get(occupations).copied()
    }

    /// Distinct many-body energies in ascending order with multiplicities.
    pub fn energy_levels(&self) -> Vec<(f64, usize)> {
        let mut e = self.energies.clone();
        e.sort_by(f64::total_cmp);
        let mut out: Vec<(f64, usize)> = Vec::new();
        for v in e {
            match out.last_mut() {
                Some((last, c)) if (*last - v).abs() <= 1e-9 * v.abs().max(1.0) => *c += 1,
                _ => out.push((v, 1)),
            }
        }
        out
    }

    /// Mean gap between distinct many-body energies.
    pub fn mean_level_spacing(&self) -> f64 {
        let lv = self.energy_levels();
        if lv.len() < 2 {
            return 0.0;
        }
        (lv[lv.len() - 1].0 - lv[0].0) / (lv.len() - 1) as f64
    }

    /// S(E) = ln #{states with |E_s − E| <= width/2}.
    pub fn entropy(&self, energy: f64, width: f64) -> f64 {
        let half = 0.5 * width + 1e-9;
        let c = self.energies.iter().filter(|&&e| (e - energy).abs() <= half).count();
        (c as f64).ln()
    }

    /// 1/T = ∂S/∂E by a central difference of step `width`.
    pub fn temperature(&self, energy: f64, width: f64) -> Result<f64> {
        let ds = self.entropy(energy + width, width) - self.entropy(energy - width, width);
        let t = 2.0 * width / ds;
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::invalid(format!("no positive temperature at E = {energy}")));
        }
        Ok(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoBodyPotential {
    pub levels: usize,
    /// V_jklm at ((j·M + k)·M + l)·M + m.
    pub values: Vec<f64>,
    pub bound: f64,
}

impl TwoBodyPotential {
    pub fn zero(m: usize) -> Self {
        Self {
            levels: m,
            values: vec![0.0; m.pow(4)],
            bound: 0.0,
        }
    }

    pub fn from_fn(m: usize, f: impl Fn(usize, usize, usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(m.pow(4));
        for j in 0..m {
            for k in 0..m {
                for l in 0..m {
                    for mm in 0..m {
                        values.push(f(j, k, l, mm));
                    }
                }
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("two-body potential"));
        }
        let bound = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let v = Self {
            levels: m,
            values,
            bound,
        };
        if !v.is_hermitian(1e-12) {
            return Err(Error::invalid("potential violates V_jklm = V_mlkj"));
        }
        Ok(v)
    }

    /// g exp(−[(k_j − k_l)² + (k_m − k_k)²]/4σ²) with k_i = i: a bounded
    /// Gaussian profile in the momentum transferred to each particle.
    pub fn gaussian(m: usize, strength: f64, range: f64) -> Result<Self> {
        if !(range > 0.0) {
            return Err(Error::invalid(format!("range must be positive, got {range}")));
        }
        let s = 4.0 * range * range;
        Self::from_fn(m, |j, k, l, mm| {
            let q1 = j as f64 - l as f64;
            let q2 = mm as f64 - k as f64;
            strength * (-(q1 * q1 + q2 * q2) / s).exp()
        })
    }

    /// g δ_jm δ_kl.
    pub fn contact(m: usize, strength: f64) -> Self {
        Self::from_fn(m, |j, k, l, mm| if j == mm && k == l { strength } else { 0.0 }).expect("contact potential is hermitian")
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize, l: usize, m: usize) -> f64 {
        let n = self.levels;
        self.values[((j * n + k) * n + l) * n + m]
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let n = self.levels;
        (0..n).all(|j| {
            (0..n).all(|k| (0..n).all(|l| (0..n).all(|m| (self.get(j, k, l, m) - self.get(m, l, k, j)).abs() <= tol)))
        })
    }
}

/// a_i on an occupation vector: amplitude (with statistics sign), in place.
fn annihilate(occ: &mut [u32], i: usize, stats: Statistics) -> f64 {
    let n = occ[i];
    if n == 0 {
        return 0.0;
    }
    occ[i] = n - 1;
    match stats {
        Statistics::Boson { .. } => (n as f64).sqrt(),
        Statistics::Fermion => sign_before(occ, i),
    }
}

fn create(occ: &mut [u32], i: usize, stats: Statistics, cap: u32) -> f64 {
    let n = occ[i];
    if n >= cap {
        return 0.0;
    }
    occ[i] = n + 1;
    match stats {
        Statistics::Boson { .. } => ((n + 1) as f64).sqrt(),
        Statistics::Fermion => sign_before(occ, i),
    }
}

fn sign_before(occ: &[u32], i: usize) -> f64 {
    if occ[..i].iter().sum::<u32>() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// V|b⟩ as sparse (index, amplitude) pairs sorted by index.
pub fn apply(system: &FockSystem, v: &TwoBodyPotential, b: usize) -> Result<Vec<(usize, f64)>> {
    if v.levels != system.levels.len() {
        return Err(Error::DimensionMismatch {
            expected: system.levels.len(),
            found: v.levels,
        });
    }
    let state = system.basis.get(b).ok_or(Error::IndexOutOfRange {
        index: b,
        len: system.dim(),
    })?;
    let stats = system.statistics;
    let cap = stats.max_occupation(system.particles);
    let m = v.levels;
    let mut acc: HashMap<usize, f64> = HashMap::new();
    let mut occ = state.clone();
    for im in 0..m {
        for il in 0..m {
            occ.copy_from_slice(state);
            let a1 = annihilate(&mut occ, im, stats);
            if a1 == 0.0 {
                continue;
            }
            let a2 = annihilate(&mut occ, il, stats);
            if a2 == 0.0 {
                continue;
            }
            let mid = occ.clone();
            for ik in 0..m {
                for ij in 0..m {
                    let w = v.get(ij, ik, il, im);
                    if w == 0.0 {
                        continue;
                    }
                    occ.copy_from_slice(&mid);
                    let c1 = create(&mut occ, ik, stats, cap);
                    if c1 == 0.0 {
                        continue;
                    }
                    let c2 = create(&mut occ, ij, stats, cap);
                    if c2 == 0.0 {
                        continue;
                    }
                    if let Some(a) = system.index_of(&occ) {
                        *acc.entry(a).or_default() += w * a1 * a2 * c1 * c2;
                    }
                }
            }
        }
    }
    let mut out: Vec<(usize, f64)> = acc.into_iter().filter(|(_, x)| *x != 0.0).collect();
    out.sort_by_key(|p| p.0);
    Ok(out)
}

pub fn matrix_element(system: &FockSystem, v: &TwoBodyPotential, a: usize, b: usize) -> Result<f64> {
    if a >= system.dim() {
        return Err(Error::IndexOutOfRange {
            index: a,
            len: system.dim(),
        });
    }
    let col = apply(system, v, b)?;
    Ok(col
        .binary_search_by_key(&a, |p| p.0)
        .map(|k| col[k].1)
        .unwrap_or(0.0))
}

/// Column k holds V|k⟩; computed in parallel, assembled in index order.
pub fn element_table(system: &FockSystem, v: &TwoBodyPotential) -> Result<Vec<Vec<(usize, f64)>>> {
    (0..system.dim()).into_par_iter().map(|b| apply(system, v, b)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayWindow {
    /// Lower states E′ satisfy |E′ − center| <= half_width.
    pub center: f64,
    pub half_width: f64,
    pub bin_width: f64,
    /// Width of the coarse-graining window for S(E), also the difference step.
    pub entropy_width: f64,
}

impl DecayWindow {
    /// Unit bins; S(E) coarse-grained over five mean level spacings.
    pub fn around(system: &FockSystem, center: f64, half_width: f64) -> Self {
        let spacing = system.mean_level_spacing();
        Self {
            center,
            half_width,
            bin_width: spacing,
            entropy_width: 5.0 * spacing,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayBin {
    pub center: f64,
    pub mean_abs_element: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSensitivity {
    pub half_width: f64,
    pub slope: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub temperature: f64,
    pub window: DecayWindow,
    pub bins: Vec<DecayBin>,
    /// Least-squares slope of ln(mean |element|) against gap over [T, 4T].
    pub slope: f64,
    pub slope_se: f64,
    pub fit_bins: usize,
    pub sensitivity: Vec<WindowSensitivity>,
}

impl DecayReport {
    /// Slope in units of −1/T.
    pub fn slope_ratio(&self) -> f64 {
        -self.slope * self.temperature
    }

    /// Bins with center >= T, in gap order.
    pub fn bins_beyond_temperature(&self) -> Vec<&DecayBin> {
        self.bins.iter().filter(|b| b.center >= self.temperature).collect()
    }
}

fn binned_decay(system: &FockSystem, table: &[Vec<(usize, f64)>], window: &DecayWindow) -> Result<Vec<DecayBin>> {
    let w = window.bin_width;
    let lower: Vec<usize> = (0..system.dim())
        .filter(|&b| (system.energies[b] - window.center).abs() <= window.half_width + 1e-9)
        .collect();
    if lower.is_empty() {
        return Err(Error::EmptyWindow(format!(
            "no many-body states within {} of E = {}",
            window.half_width, window.center
        )));
    }
    // two particles can move at most 2(e_max − e_min); wider gaps are exact zeros
    let lo = system.levels.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = system.levels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let reachable = 2.0 * (hi - lo);
    let max_gap = (system.energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - window.center + window.half_width)
        .min(reachable);
    let nbins = (max_gap / w).round().max(0.0) as usize + 1;
    let mut sum = vec![0.0; nbins];
    let mut count = vec![0usize; nbins];
    for &b in &lower {
        let eb = system.energies[b];
        let col = &table[b];
        let mut cursor = 0;
        for a in 0..system.dim() {
            let gap = system.energies[a] - eb;
            while cursor < col.len() && col[cursor].0 < a {
                cursor += 1;
            }
            if gap < -1e-9 || gap > max_gap + 1e-9 {
                continue;
            }
            let k = (gap / w).round() as usize;
            if k >= nbins {
                continue;
            }
            count[k] += 1;
            if cursor < col.len() && col[cursor].0 == a {
                sum[k] += col[cursor].1.abs();
            }
        }
    }
    let mut bins = Vec::new();
    for k in 0..nbins {
        if count[k] == 0 {
            continue;
        }
        if count[k] < MIN_BIN_COUNT {
            warn!("gap bin {} has {} pairs; dropped", k as f64 * w, count[k]);
            continue;
        }
        bins.push(DecayBin {
            center: k as f64 * w,
            mean_abs_element: sum[k] / count[k] as f64,
            count: count[k],
        });
    }
    Ok(bins)
}

fn fit_slope(bins: &[DecayBin], t: f64) -> Result<(f64, f64, usize)> {
    let pts: Vec<(f64, f64)> = bins
        .iter()
        .filter(|b| b.center >= t - 1e-9 && b.center <= 4.0 * t + 1e-9 && b.mean_abs_element > 0.0)
        .map(|b| (b.center, b.mean_abs_element.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            found: pts.len(),
        });
    }
    let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let f = stats::linear_fit(&x, &y);
    Ok((f.slope, f.slope_se, pts.len()))
}

pub fn averaged_offdiagonal_decay(system: &FockSystem, v: &TwoBodyPotential, window: &DecayWindow) -> Result<DecayReport> {
    if !(window.bin_width > 0.0) || !(window.half_width >= 0.0) || !(window.entropy_width > 0.0) {
        return Err(Error::invalid("window widths must be positive"));
    }
    let temperature = system.temperature(window.center, window.entropy_width)?;
    let table = element_table(system, v)?;
    let bins = binned_decay(system, &table, window)?;
    if bins.len() < MIN_BINS {
        return Err(Error::InsufficientSamples {
            needed: MIN_BINS,
            found: bins.len(),
        });
    }
    let (slope, slope_se, fit_bins) = fit_slope(&bins, temperature)?;
    let sensitivity = [0.5, 2.0]
        .iter()
        .map(|&s| {
            let mut w = window.clone();
            w.half_width = window.half_width * s;
            let slope = binned_decay(system, &table, &w)
                .and_then(|b| fit_slope(&b, temperature))
                .map(|r| r.0)
                .ok();
            WindowSensitivity {
                half_width: w.half_width,
                slope,
            }
        })
        .collect();
    Ok(DecayReport {
        temperature,
        window: window.clone(),
        bins,
        slope,
        slope_se,
        fit_bins,
        sensitivity,
    })
}
