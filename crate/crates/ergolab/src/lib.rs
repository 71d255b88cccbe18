//! Desk-scale numerics for thermalization in banded random-matrix models.
//!
//! The crate builds a picket-fence spectrum perturbed by a banded Gaussian
//! random matrix, diagonalizes it, and measures eigenvector envelopes,
//! eigenstate expectation statistics and time averages. Two independent
//! oracles (a harmonic crystal and a small second-quantized gas) and a CLI
//! runner round it out.

pub mod bandcheck;
pub mod crystal;
pub mod dynamics;
pub mod envelope;
pub mod error;
pub mod matrix;
pub mod model;
pub mod observables;
pub mod quadrature;
pub mod rng;
pub mod runner;
pub mod spectra;
pub mod stats;

pub use error::{Error, Result};
pub use matrix::SymmetricMatrix;
