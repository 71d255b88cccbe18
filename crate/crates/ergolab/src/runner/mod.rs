//! Config-driven experiment runs with reproducible on-disk results.

pub mod bundle;
pub mod config;
pub mod experiments;

use std::path::{Path, PathBuf};

pub use bundle::{emit_report, prepare_output_dir, write_manifest, ReportFormat, ResultsBundle, RunStatus, MANIFEST_FILE};
pub use config::{ExperimentConfig, ExperimentKind};

use crate::error::{Error, Result};
use crate::rng::realization_seed;

pub const OUTPUT_ROOT_ENV: &str = "ERGOLAB_OUTPUT_ROOT";

/// `--out` wins, then `output` in the config, then `$ERGOLAB_OUTPUT_ROOT/<kind>-seed<seed>`.
pub fn resolve_output_dir(config: &ExperimentConfig, cli_out: Option<&Path>) -> PathBuf {
    if let Some(p) = cli_out {
        return p.to_path_buf();
    }
    if let Some(p) = &config.output {
        return p.clone();
    }
    let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("results"));
    root.join(format!("{}-seed{}", config.kind.name(), config.seed))
}

pub fn realization_seeds(config: &ExperimentConfig) -> Vec<u64> {
    (0..config.realizations).map(|r| realization_seed(config.seed, r)).collect()
}

/// Runs the experiment in memory. The returned bundle is complete.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultsBundle> {
    config.validate()?;
    let seeds = realization_seeds(config);
    let mut bundle = ResultsBundle::new(config.clone(), seeds.clone());
    let swept = matches!(
        config.kind,
        ExperimentKind::Envelope
            | ExperimentKind::Varfe
            | ExperimentKind::EthVariance
            | ExperimentKind::Quench
            | ExperimentKind::Superposition
    );
    if swept && config.epsilons().is_empty() {
        bundle.warn("empty epsilon sweep: nothing to run");
        bundle.finish();
        return Ok(bundle);
    }
    use experiments::*;
    match config.kind {
        ExperimentKind::Envelope => run_envelope(config, &seeds, &mut bundle)?,
        ExperimentKind::Varfe => run_varfe(config, &mut bundle)?,
        ExperimentKind::EthVariance => run_eth_variance(config, &seeds, &mut bundle)?,
        ExperimentKind::Quench => run_quench(config, &seeds, &mut bundle)?,
        ExperimentKind::Superposition => run_superposition(config, &seeds, &mut bundle)?,
        ExperimentKind::Crystal => run_crystal(config, &mut bundle)?,
        ExperimentKind::Bandcheck => run_bandcheck(config, &mut bundle)?,
        ExperimentKind::Tailbound => run_tailbound(config, &mut bundle)?,
    }
    bundle.finish();
    Ok(bundle)
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub overwrite: bool,
    pub format: ReportFormat,
    /// Worker threads; 0 lets rayon decide.
    pub jobs: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            out: None,
            overwrite: false,
            format: ReportFormat::default(),
            jobs: 0,
        }
    }
}

/// Full run: prepare the directory, mark it incomplete, compute, write results.
/// On failure the directory keeps the incomplete manifest.
pub fn execute(config: &ExperimentConfig, options: &RunOptions) -> Result<PathBuf> {
    config.validate()?;
    let dir = resolve_output_dir(config, options.out.as_deref());
    prepare_output_dir(&dir, options.overwrite)?;
    let pending = ResultsBundle::new(config.clone(), realization_seeds(config));
    write_manifest(&dir, &pending.manifest)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let bundle = pool.install(|| run_experiment(config))?;
    emit_report(&bundle, &dir, options.format)?;
    log::info!("wrote {}", dir.display());
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_output_dir_precedence() {
        let mut c = ExperimentConfig::for_kind(ExperimentKind::Tailbound);
        c.seed = 7;
        assert!(resolve_output_dir(&c, None).ends_with("tailbound-seed7"));
        c.output = Some(PathBuf::from("/tmp/x"));
        assert_eq!(resolve_output_dir(&c, None), PathBuf::from("/tmp/x"));
        assert_eq!(resolve_output_dir(&c, Some(Path::new("y"))), PathBuf::from("y"));
    }

    #[test]
    fn test_seeds_shared_and_distinct() {
        let mut c = ExperimentConfig::default();
        c.realizations = 5;
        let s = realization_seeds(&c);
        assert_eq!(s.len(), 5);
        let mut d = s.clone();
        d.sort();
        d.dedup();
        assert_eq!(d.len(), 5);
    }

    #[test]
    fn test_empty_sweep_is_manifest_only() {
        let mut c = ExperimentConfig::for_kind(ExperimentKind::Quench);
        c.sweep.epsilon = Some(vec![]);
        let b = run_experiment(&c).unwrap();
        assert!(b.tables.is_empty());
        assert_eq!(b.manifest.status, RunStatus::Complete);
        assert_eq!(b.manifest.warnings.len(), 1);
    }
}
