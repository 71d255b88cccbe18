//! JSON experiment configuration. Every section has defaults, so `{}` plus a
//! kind is a complete config; CLI flags are applied on top by the binary.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bandcheck::Statistics;
use crate::error::{Error, Result};
use crate::model::{Jitter, PerturbationParams, Taper};
use crate::observables::{ObservableSpec, ProfileShape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    #[default]
    Envelope,
    Varfe,
    EthVariance,
    Quench,
    Superposition,
    Crystal,
    Bandcheck,
    Tailbound,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Envelope => "envelope",
            ExperimentKind::Varfe => "varfe",
            ExperimentKind::EthVariance => "eth-variance",
            ExperimentKind::Quench => "quench",
            ExperimentKind::Superposition => "superposition",
            ExperimentKind::Crystal => "crystal",
            ExperimentKind::Bandcheck => "bandcheck",
            ExperimentKind::Tailbound => "tailbound",
        }
    }

    fn uses_model(&self) -> bool {
        matches!(
            self,
            ExperimentKind::Envelope
                | ExperimentKind::EthVariance
                | ExperimentKind::Quench
                | ExperimentKind::Superposition
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n: usize,
    pub delta: f64,
    pub epsilon: f64,
    pub band: usize,
    pub taper: Taper,
    pub jitter: Jitter,
    /// Fraction of eigenstates dropped at each spectral edge.
    pub edge_exclusion: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            delta: 1.0,
            epsilon: 2.0,
            band: 300,
            taper: Taper::Hard,
            jitter: Jitter::None,
            edge_exclusion: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Coupling values; falls back to `model.epsilon` when absent.
    pub epsilon: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvelopeOptions {
    /// Fit window in units of the predicted half-width.
    pub fit_range_multiple: f64,
}

impl Default for EnvelopeOptions {
    fn default() -> Self {
        Self { fit_range_multiple: 5.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EthOptions {
    pub observable: ObservableSpec,
    /// Probe eigenstate indices; every n/20 levels across the central 70% when absent.
    pub probes: Option<Vec<usize>>,
}

impl Default for EthOptions {
    fn default() -> Self {
        Self {
            observable: ObservableSpec::BandedRandom {
                width: 1,
                scale: 1.0,
                seed: 7,
            },
            probes: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuenchOptions {
    pub observable: ObservableSpec,
    /// Initial unperturbed levels; n/2 and n/2 + 1 when absent.
    pub levels: Option<Vec<usize>>,
}

impl Default for QuenchOptions {
    fn default() -> Self {
        Self {
            observable: ObservableSpec::DiagonalProfile {
                shape: ProfileShape::Linear,
            },
            levels: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuperpositionOptions {
    pub observable: ObservableSpec,
    /// Levels of an equal-weight superposition; n/4 and 3n/4 when absent.
    pub components: Option<Vec<usize>>,
}

impl Default for SuperpositionOptions {
    fn default() -> Self {
        Self {
            observable: ObservableSpec::DiagonalProfile {
                shape: ProfileShape::Linear,
            },
            components: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarfeOptions {
    /// Lag grid half-range in predicted widths.
    pub grid_multiple: f64,
}

impl Default for VarfeOptions {
    fn default() -> Self {
        Self { grid_multiple: 40.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrystalOptions {
    pub dimension: usize,
    pub sizes: Vec<usize>,
    pub energy_per_site: f64,
    pub samples: usize,
}

impl Default for CrystalOptions {
    fn default() -> Self {
        Self {
            dimension: 3,
            sizes: vec![4, 6, 8, 10],
            energy_per_site: 1.0,
            samples: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandcheckOptions {
    pub levels: usize,
    pub particles: usize,
    pub statistics: Statistics,
    pub strength: f64,
    pub range: f64,
    /// Lower-state window center and half-width.
    pub center: f64,
    pub half_width: f64,
}

impl Default for BandcheckOptions {
    fn default() -> Self {
        Self {
            levels: 8,
            particles: 4,
            statistics: Statistics::Boson { cap: None },
            strength: 1.0,
            range: 4.0,
            center: 4.0,
            half_width: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailboundOptions {
    pub deltas: Vec<f64>,
    pub temperatures: Vec<f64>,
    /// E_max in units of T.
    pub e_max_multiples: Vec<f64>,
}

impl Default for TailboundOptions {
    fn default() -> Self {
        Self {
            deltas: vec![0.5, 1.0, 2.0, 5.0],
            temperatures: vec![1.0, 10.0, 50.0, 100.0],
            e_max_multiples: vec![2.0, 5.0, 20.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub model: ModelConfig,
    pub sweep: SweepConfig,
    pub realizations: usize,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub envelope: EnvelopeOptions,
    pub eth: EthOptions,
    pub quench: QuenchOptions,
    pub superposition: SuperpositionOptions,
    pub varfe: VarfeOptions,
    pub crystal: CrystalOptions,
    pub bandcheck: BandcheckOptions,
    pub tailbound: TailboundOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Envelope,
            model: ModelConfig::default(),
            sweep: SweepConfig::default(),
            realizations: 20,
            seed: 1,
            output: None,
            envelope: EnvelopeOptions::default(),
            eth: EthOptions::default(),
            quench: QuenchOptions::default(),
            superposition: SuperpositionOptions::default(),
            varfe: VarfeOptions::default(),
            crystal: CrystalOptions::default(),
            bandcheck: BandcheckOptions::default(),
            tailbound: TailboundOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn for_kind(kind: ExperimentKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn epsilons(&self) -> Vec<f64> {
        self.sweep.epsilon.clone().unwrap_or_else(|| vec![self.model.epsilon])
    }

    pub fn perturbation(&self, epsilon: f64, seed: u64) -> PerturbationParams {
        PerturbationParams {
            epsilon,
            band_cutoff: self.model.band,
            taper: self.model.taper,
            seed,
        }
    }

    /// Checks that do not depend on a particular sweep point.
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if self.kind.uses_model() {
            if m.n < 2 {
                return Err(Error::Config(format!("model.n must be >= 2, got {}", m.n)));
            }
            if !(m.delta > 0.0) {
                return Err(Error::Config(format!("model.delta must be positive, got {}", m.delta)));
            }
            if m.band + 1 > m.n {
                return Err(Error::Config(format!("model.band {} exceeds n - 1", m.band)));
            }
            if !(0.0..0.5).contains(&m.edge_exclusion) {
                return Err(Error::Config(format!("model.edge_exclusion {} outside [0, 0.5)", m.edge_exclusion)));
            }
            if self.realizations == 0 {
                return Err(Error::Config("realizations must be >= 1".into()));
            }
        }
        if self.epsilons().iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
            return Err(Error::Config("sweep.epsilon values must be finite and >= 0".into()));
        }
        match self.kind {
            ExperimentKind::EthVariance if self.realizations < 2 => {
                Err(Error::Config("eth-variance needs at least 2 realizations".into()))
            }
            ExperimentKind::Crystal if self.crystal.sizes.is_empty() => Err(Error::Config("crystal.sizes is empty".into())),
            ExperimentKind::Tailbound
                if self.tailbound.deltas.is_empty()
                    || self.tailbound.temperatures.is_empty()
                    || self.tailbound.e_max_multiples.is_empty() =>
            {
                Err(Error::Config("tailbound grid axes must be non-empty".into()))
            }
            _ => Ok(()),
        }
    }
}
