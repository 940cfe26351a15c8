use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use parity_bundle::config::{config_from_pairs, parse_pairs, ExperimentKind};
use parity_bundle::experiment::run_experiment;
use parity_bundle::parallel::{configure_threads, Execution};

#[derive(Parser)]
#[command(name = "parity-bundle", version, about = "Driven qubit-cavity bundle emission simulator")]
struct Cli {
    #[command(subcommand)]
    kind: Kind,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output CSV path.
    #[arg(long, global = true, default_value = "out.csv")]
    out: PathBuf,
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Also write a JSON mirror next to the CSV.
    #[arg(long, global = true)]
    json: bool,
    /// Extra `key=value` settings applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Kind {
    /// Steady-state photon number and g^(n) versus qubit detuning.
    Spectrum,
    /// Closed-system populations from |0,g>.
    Rabi,
    /// Quantum-jump trajectories with click logs and bundle counts.
    Trajectories,
    /// Two-photon bundle purity over a kappa or theta grid.
    PuritySweep,
    /// Delayed bundle (or photon) correlation by quantum regression.
    G2tau,
    /// Analytic versus numerical two-photon rate over a theta grid.
    OmegaEff,
}

impl From<Kind> for ExperimentKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Spectrum => ExperimentKind::Spectrum,
            Kind::Rabi => ExperimentKind::Rabi,
            Kind::Trajectories => ExperimentKind::Trajectories,
            Kind::PuritySweep => ExperimentKind::PuritySweep,
            Kind::G2tau => ExperimentKind::G2Tau,
            Kind::OmegaEff => ExperimentKind::OmegaEff,
        }
    }
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>, String> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?,
        None => String::new(),
    };
    let mut pairs = parse_pairs(&text).map_err(|e| e.to_string())?;
    for s in &cli.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| format!("--set expects KEY=VALUE, got '{s}'"))?;
        pairs.insert(k.trim().to_string(), v.trim().to_string());
    }
    if let Some(seed) = cli.seed {
        pairs.insert("seed".into(), seed.to_string());
    }
    let cfg = config_from_pairs(&pairs, Some(cli.kind.into())).map_err(|e| e.to_string())?;
    let exec = match cli.threads {
        Some(0) => return Err("--threads must be >= 1".into()),
        Some(1) => Execution::Sequential,
        Some(n) => {
            configure_threads(n);
            Execution::Parallel
        }
        None => Execution::Parallel,
    };
    run_experiment(&cfg, &cli.out, cli.json, exec).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
