use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dsbayes::error::{Error, Result};
use dsbayes::experiment::{exit_code, run_compare, run_experiment, thread_count, ExperimentConfig};
use dsbayes::problems::PRESETS;

#[derive(Parser)]
#[command(name = "dsbayes", version, about = "Data-space Krylov posterior approximation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the empirical-Bayes bidiagonalization and write traces and fields.
    Run { config: PathBuf },
    /// Compare against the likelihood-informed-subspace baseline per rank.
    CompareLis { config: PathBuf },
    /// List the shipped problem presets.
    Presets,
}

fn dispatch(cli: Cli) -> Result<()> {
    let threads = thread_count()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    match cli.command {
        Command::Presets => {
            for p in PRESETS {
                println!("{:<16} {}", p.name, p.description);
            }
            Ok(())
        }
        Command::Run { config } => {
            let (cfg, out) = ExperimentConfig::load(&config)?;
            let outcome = pool.install(|| run_experiment(&cfg, &out))?;
            println!(
                "k = {}, λ = {:.6e}, stop = {:?}; outputs in {}",
                outcome.run.approx.k(),
                outcome.run.approx.lambda(),
                outcome.run.stop_reason,
                out.display()
            );
            Ok(())
        }
        Command::CompareLis { config } => {
            let (cfg, out) = ExperimentConfig::load(&config)?;
            let rows = pool.install(|| run_compare(&cfg, &out))?;
            println!("{} ranks compared; compare.csv in {}", rows.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dsbayes: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
