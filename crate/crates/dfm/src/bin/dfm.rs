use std::path::PathBuf;

use clap::{Parser, Subcommand};

use dfm::config::ExperimentConfig;
use dfm::experiment::RunOutput;

#[derive(Parser)]
#[command(name = "dfm", version, about = "Diffusion-flow-matching experiments on Gaussian mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config file.
    Run {
        /// Path to the experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn execute(path: &PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> dfm::Result<RunOutput> {
    let mut config = ExperimentConfig::from_file(path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(o) = out {
        config.out = Some(o);
    }
    dfm::experiment::run(&config)
}

fn main() {
    // DFM_THREADS caps the worker count; results are identical for any
    // value, so this only trades latency for cores.
    if let Ok(raw) = std::env::var("DFM_THREADS") {
        match raw.parse::<usize>() {
            Ok(k) if k >= 1 => {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build_global()
                    .expect("worker pool is configured before any parallel work");
            }
            _ => {
                eprintln!("{{\"error\":\"config\",\"message\":\"DFM_THREADS must be a positive integer, got {raw:?}\"}}");
                std::process::exit(1);
            }
        }
    }
    let cli = Cli::parse();
    let Command::Run { config, seed, out } = cli.command;
    match execute(&config, seed, out) {
        Ok(output) => {
            println!(
                "wrote {} rows to {} (sidecar {})",
                output.rows.len(),
                output.csv_path.display(),
                output.sidecar_path.display()
            );
        }
        Err(e) => {
            let diagnostic = e.diagnostic();
            eprintln!(
                "{}",
                serde_json::to_string_pretty(&diagnostic).unwrap_or_else(|_| e.to_string())
            );
            std::process::exit(e.exit_code());
        }
    }
}
