//! Dense symmetric eigendecomposition (backed by faer) with a fixed sign
//! convention and checked orthonormality/residual bounds.

use std::ops::Range;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::evd::{self_adjoint_evd, self_adjoint_evd_scratch, ComputeEigenvectors};
use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par, Spec};

use crate::error::{Error, Result};
use crate::matrix::SymmetricMatrix;

pub const SOLVER_TOLERANCE: f64 = 1e-10;
pub const DEGENERACY_THRESHOLD: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct EigenSystem {
    pub eigenvalues: Vec<f64>,
    n: usize,
    /// Column-major: entry (j, i) = ⟨j|₀ i⟩ lives at `i * n + j`.
    vectors: Vec<f64>,
    pub residual_norm: f64,
    pub orthonormality_error: f64,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Amplitude of unperturbed state j in eigenstate i.
    #[inline]
    pub fn component(&self, j: usize, i: usize) -> f64 {
        self.vectors[i * self.n + j]
    }

    /// Eigenvector i in the unperturbed basis.
    #[inline]
    pub fn column(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.n..(i + 1) * self.n]
    }

    /// Indices k where eigenvalue k+1 - eigenvalue k < threshold·Δ.
    pub fn near_degeneracies(&self, spacing: f64) -> Vec<usize> {
        let tol = DEGENERACY_THRESHOLD * spacing;
        self.eigenvalues
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1] - w[0] < tol)
            .map(|(k, _)| k)
            .collect()
    }

    /// Refuses when any adjacent pair is closer than 1e-9 of the mean spacing.
    pub fn ensure_nondegenerate(&self) -> Result<()> {
        if self.n < 2 {
            return Ok(());
        }
        let spacing = mean_level_spacing(&self.eigenvalues, 0..self.n)?;
        if let Some(&k) = self.near_degeneracies(spacing).first() {
            return Err(Error::NearDegenerate {
                index: k,
                gap: self.eigenvalues[k + 1] - self.eigenvalues[k],
            });
        }
        Ok(())
    }

    /// ⟨i|v⟩ for every eigenstate i, with v in the unperturbed basis.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.column(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

pub fn diagonalize(h: &SymmetricMatrix) -> Result<EigenSystem> {
    if !h.is_finite() {
        return Err(Error::NonFinite("Hamiltonian"));
    }
    let n = h.dim();
    if n == 0 {
        return Err(Error::invalid("empty matrix"));
    }
    let a = Mat::<f64>::from_fn(n, n, |i, j| h.get(i, j));
    let mut s = Mat::<f64>::zeros(n, n);
    let mut u = Mat::<f64>::zeros(n, n);
    let params = Spec::default();
    let par = Par::Seq;
    let mut mem = MemBuffer::new(self_adjoint_evd_scratch::<f64>(n, ComputeEigenvectors::Yes, par, params));
    self_adjoint_evd(
        a.as_ref(),
        s.as_mut().diagonal_mut(),
        Some(u.as_mut()),
        par,
        MemStack::new(&mut mem),
        params,
    )
    .map_err(|_| Error::NoConvergence { residual: f64::NAN })?;

    let raw: Vec<f64> = (0..n).map(|i| s[(i, i)]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| raw[x].total_cmp(&raw[y]).then(x.cmp(&y)));

    let mut eigenvalues = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(n * n);
    for &src in &order {
        eigenvalues.push(raw[src]);
        let col: Vec<f64> = (0..n).map(|j| u[(j, src)]).collect();
        let mut pivot = 0;
        for (j, v) in col.iter().enumerate() {
            if v.abs() > col[pivot].abs() {
                pivot = j;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        vectors.extend(col.iter().map(|v| v * sign));
    }
    if eigenvalues.iter().chain(&vectors).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("eigendecomposition"));
    }

    let c = Mat::<f64>::from_fn(n, n, |j, i| vectors[i * n + j]);
    let mut hc = Mat::<f64>::zeros(n, n);
    matmul(hc.as_mut(), Accum::Replace, a.as_ref(), c.as_ref(), 1.0, par);
    let mut residual = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            residual = residual.max((hc[(j, i)] - c[(j, i)] * eigenvalues[i]).abs());
        }
    }
    let mut ctc = Mat::<f64>::zeros(n, n);
    matmul(ctc.as_mut(), Accum::Replace, c.transpose(), c.as_ref(), 1.0, par);
    let mut ortho = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            ortho = ortho.max((ctc[(i, j)] - target).abs());
        }
    }

    let scale = eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = if scale > 0.0 { scale } else { 1.0 };
    if residual > SOLVER_TOLERANCE * scale || ortho > SOLVER_TOLERANCE {
        return Err(Error::NoConvergence {
            residual: residual.max(ortho),
        });
    }
    Ok(EigenSystem {
        eigenvalues,
        n,
        vectors,
        residual_norm: residual,
        orthonormality_error: ortho,
    })
}

pub fn mean_level_spacing(eigenvalues: &[f64], window: Range<usize>) -> Result<f64> {
    if window.end > eigenvalues.len() || window.end < window.start + 2 {
        return Err(Error::EmptyWindow(format!(
            "spacing window {:?} needs >= 2 of {} levels",
            window,
            eigenvalues.len()
        )));
    }
    let k = window.end - window.start;
    Ok((eigenvalues[window.end - 1] - eigenvalues[window.start]) / (k - 1) as f64)
}

/// Eigenvector i expressed in the unperturbed basis (unit norm).
pub fn overlap_row(system: &EigenSystem, i: usize) -> Result<Vec<f64>> {
    if i >= system.dim() {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: system.dim(),
        });
    }
    Ok(system.column(i).to_vec())
}
