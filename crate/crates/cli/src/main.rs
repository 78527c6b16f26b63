use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

mod config;
mod error;
mod modes;
mod output;

use config::Mode;

/// Isogeometric Galerkin option pricing experiments.
#[derive(Debug, Parser)]
#[command(name = "iga-price", version)]
struct Cli {
    mode: Mode,
    /// TOML or JSON experiment file; may name a built-in preset.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed for Monte Carlo references; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = config::load(&cli.config, cli.mode, cli.seed)
        .and_then(|resolved| modes::run(&resolved, &cli.out));
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
