//! `cmdp-lab`: run contextual-MDP learning experiments, the diagnostics
//! battery, and export plot data.
//!
//! Exit codes: 0 ok, 2 configuration error, 3 runtime error, 4 deterministic
//! check failure, 5 probabilistic violations above the allowance.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use cmdp_core::harness::{cli_check, cli_plot_data, cli_run, Overrides, EXIT_CONFIG};

#[derive(Debug, Parser)]
#[command(
    name = "cmdp-lab",
    version,
    about = "Model-based contextual MDP experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the learner for every configured seed; writes CSVs and summary.json.
    Run {
        config: PathBuf,
        /// Run a single agent seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of episodes.
        #[arg(long)]
        episodes: Option<usize>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run instance validation, the deterministic checks and the
    /// multi-seed probabilistic checks.
    Check { config: PathBuf },
    /// Print a two-column TSV (n, avg_gap) from a run summary.
    PlotData { summary: PathBuf },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let is_info = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            std::process::exit(if is_info { 0 } else { EXIT_CONFIG });
        }
    };
    let code = match cli.command {
        Command::Run {
            config,
            seed,
            episodes,
            out,
        } => cli_run(
            &config,
            &Overrides {
                seed,
                episodes,
                output_dir: out,
            },
        ),
        Command::Check { config } => cli_check(&config),
        Command::PlotData { summary } => cli_plot_data(&summary),
    };
    std::process::exit(code);
}
