use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("eigensolver failed to converge (residual {residual:e})")]
    NoConvergence { residual: f64 },

    #[error("near-degenerate levels at index {index} (gap {gap:e})")]
    NearDegenerate { index: usize, gap: f64 },

    #[error("empty window: {0}")]
    EmptyWindow(String),

    #[error("insufficient samples: need {needed}, have {found}")]
    InsufficientSamples { needed: usize, found: usize },

    #[error("input not normalized (sum {sum})")]
    Unnormalized { sum: f64 },

    #[error("fit did not converge after {iterations} iterations (best A={amplitude}, delta={half_width}, residual={residual:e})")]
    FitNotConverged {
        iterations: usize,
        amplitude: f64,
        half_width: f64,
        residual: f64,
    },

    #[error("minimizer did not converge after {iterations} iterations (F={free_energy}, stationarity {stationarity:e})")]
    MinimizerNotConverged {
        iterations: usize,
        free_energy: f64,
        stationarity: f64,
    },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("saddle point not bracketed for target energy {0}")]
    SaddleNotBracketed(f64),

    #[error("basis too large: {size} states exceeds limit {limit}")]
    BasisTooLarge { size: usize, limit: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("output directory {0} exists and is not empty (use --overwrite)")]
    OutputExists(PathBuf),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 config, 2 numerical, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_)
            | Error::Config(_)
            | Error::OutputExists(_)
            | Error::DimensionMismatch { .. }
            | Error::IndexOutOfRange { .. } => 1,
            Error::Io { .. } => 3,
            _ => 2,
        }
    }
}
