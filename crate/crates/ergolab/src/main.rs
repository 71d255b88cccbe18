use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ergolab::runner::{execute, ExperimentConfig, ExperimentKind, ReportFormat, RunOptions};
use ergolab::Result;

#[derive(Parser, Debug)]
#[command(name = "ergolab", version, about = "Thermalization numerics for banded random-matrix models")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON experiment config; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (default: $ERGOLAB_OUTPUT_ROOT/<kind>-seed<seed>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true)]
    realizations: Option<usize>,

    /// Coupling sweep, comma separated. The bare flag gives an empty sweep.
    #[arg(long, global = true, value_delimiter = ',', num_args = 0..)]
    epsilon: Option<Vec<f64>>,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Replace a non-empty output directory.
    #[arg(long, global = true)]
    overwrite: bool,

    #[arg(long, global = true, value_enum, default_value_t = ReportFormat::PlotData)]
    format: ReportFormat,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Averaged eigenvector envelope and Lorentzian fit.
    Envelope,
    /// Variational free-energy minimization with and without level repulsion.
    Varfe,
    /// Spread of eigenstate expectation values across realizations.
    EthVariance,
    /// Infinite-time averages after a quench from an unperturbed level.
    Quench,
    /// Time averages for a superposition of unperturbed levels.
    Superposition,
    /// Microcanonical harmonic crystal fluctuations.
    Crystal,
    /// Off-diagonal decay of a two-body interaction in a Fock basis.
    Bandcheck,
    /// Exponential-weighted envelope tail integral.
    Tailbound,
}

impl Command {
    fn kind(self) -> ExperimentKind {
        match self {
            Command::Envelope => ExperimentKind::Envelope,
            Command::Varfe => ExperimentKind::Varfe,
            Command::EthVariance => ExperimentKind::EthVariance,
            Command::Quench => ExperimentKind::Quench,
            Command::Superposition => ExperimentKind::Superposition,
            Command::Crystal => ExperimentKind::Crystal,
            Command::Bandcheck => ExperimentKind::Bandcheck,
            Command::Tailbound => ExperimentKind::Tailbound,
        }
    }
}

fn run(cli: Cli) -> Result<PathBuf> {
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    config.kind = cli.command.kind();
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(r) = cli.realizations {
        config.realizations = r;
    }
    if let Some(e) = cli.epsilon {
        config.sweep.epsilon = Some(e);
    }
    let options = RunOptions {
        out: cli.out,
        overwrite: cli.overwrite,
        format: cli.format,
        jobs: cli.jobs,
    };
    execute(&config, &options)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
