use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use grasp::cli::{cmd_train, cmd_verify, exit_code};
use grasp::config::parse_config;

#[derive(Parser)]
#[command(
    name = "grasp",
    version,
    about = "Consensus-gradient multi-agent policy optimization"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a JSON run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a property-verification suite.
    Verify {
        /// qp, kkt, gamma_factor, gradcheck, gae, margin or all
        #[arg(long)]
        suite: String,
        #[arg(long)]
        cases: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let code = match Args::parse().command {
        Command::Train { config, seed, out } => match parse_config(&config) {
            Ok(c) => cmd_train(&c.with_overrides(seed, out)),
            Err(err) => {
                eprintln!("error: {err}");
                exit_code(&err)
            }
        },
        Command::Verify { suite, cases, seed } => cmd_verify(&suite, cases, seed),
    };
    ExitCode::from(code as u8)
}
