use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedbalance::config::parse_config;
use fedbalance::runner;

#[derive(Parser)]
#[command(name = "fedbalance", version, about = "Desk-scale federated-learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded experiment (optionally over several seeds) and write
    /// per-seed metrics CSVs, a summary, and a manifest
    Run {
        /// Experiment config file
        #[arg(long)]
        config: PathBuf,
        /// Number of seeds: seed, seed+1, ...
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// Output directory (default: $FEDBALANCE_OUT or ./runs)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the per-client class-count table for the config's partition
    InspectPartition {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print single-sample MAC counts for registry architectures
    Macs {
        /// Architecture names (cnn-small, mlp-weak, linear)
        #[arg(required = true)]
        arches: Vec<String>,
    },
}

fn default_out_dir() -> PathBuf {
    std::env::var_os("FEDBALANCE_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seeds, out } => {
            let out = out.unwrap_or_else(default_out_dir);
            parse_config(&config).and_then(|cfg| {
                let summary = runner::run(&cfg, seeds, &out)?;
                for (seed, acc) in (cfg.seed..).zip(&summary.final_accuracies) {
                    println!("seed {seed}: final accuracy {acc:.4}");
                }
                println!(
                    "final accuracy over {} seed(s): {:.4} +/- {:.4}",
                    summary.final_accuracies.len(),
                    summary.mean_final_accuracy,
                    summary.std_final_accuracy
                );
                println!("metrics written to {}", out.display());
                Ok(())
            })
        }
        Command::InspectPartition { config } => parse_config(&config)
            .and_then(|cfg| runner::inspect_partition(&cfg))
            .map(|table| print!("{table}")),
        Command::Macs { arches } => runner::macs_table(&arches).map(|table| print!("{table}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
