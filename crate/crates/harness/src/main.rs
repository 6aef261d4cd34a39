use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sqn_harness::config::{DatasetSection, ExperimentConfig};
use sqn_harness::experiment::{plot_from_dir, run_experiment, RunOptions};
use sqn_harness::{verify, HarnessError};

/// Benchmark harness for clipped stochastic quasi-Newton optimization.
#[derive(Parser)]
#[command(name = "sqnbench", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured synthetic dataset and write it as text.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Override the dataset seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (defaults to the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the configured experiment: all algorithms, all seeds.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run a single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Enforce the feasibility ranges of the analysis when validating.
        #[arg(long)]
        strict_theory: bool,
        /// Derive the batch sizes and restart period from the accuracy
        /// target instead of the configured values.
        #[arg(long)]
        theory_batches: bool,
    },
    /// Re-render the comparison plot from previously written CSV traces.
    Plot {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in property checks.
    Verify,
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch() -> Result<(), HarnessError> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            match &mut cfg.dataset {
                DatasetSection::Generate { seed: ds_seed, .. } => {
                    if let Some(s) = seed {
                        *ds_seed = s;
                    }
                }
                DatasetSection::File { .. } => {
                    return Err(HarnessError::Config(
                        "gen-data needs dataset.source = \"generate\"".into(),
                    ))
                }
            }
            let syn = cfg.dataset.synthetic_config().expect("generate source");
            let data = sqn_core::objectives::generate_synthetic(&syn)?;
            let dir = out.unwrap_or_else(|| cfg.experiment.output_dir.clone());
            std::fs::create_dir_all(&dir)?;
            let path = dir.join("dataset.txt");
            data.save(&path)?;
            println!("wrote {} ({} samples, dimension {})", path.display(), data.len(), data.dimension());
            Ok(())
        }
        Command::Run { config, seed, out, strict_theory, theory_batches } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.experiment.seeds = vec![s];
            }
            let dir = out.unwrap_or_else(|| cfg.experiment.output_dir.clone());
            let opts = RunOptions { strict_theory, theory_batches };
            let output = run_experiment(&cfg, &dir, opts)?;
            print!("{}", output.report_text);
            if !output.report.aborts.is_empty() {
                return Err(HarnessError::Divergence(format!(
                    "{} run(s) aborted; see report",
                    output.report.aborts.len()
                )));
            }
            Ok(())
        }
        Command::Plot { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out.unwrap_or_else(|| cfg.experiment.output_dir.clone());
            let path = plot_from_dir(&cfg, &dir)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Verify => {
            let ok = verify::run_all(std::io::stdout().lock())
                .map_err(|e| HarnessError::Io(e.to_string()))?;
            if ok {
                Ok(())
            } else {
                Err(HarnessError::Divergence("verification checks failed".into()))
            }
        }
    }
}
