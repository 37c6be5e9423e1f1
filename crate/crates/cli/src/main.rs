use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use zisae_cli::{exit_code, run, Command, RunConfig, EXIT_CONFIG, EXIT_NOT_CONVERGED};

#[derive(Parser)]
#[command(name = "zisae", version, about = "Zero-inflated small area estimation")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Fit models and archive their draws or estimates.
    Fit,
    /// County (and unit) predictions from archived fits.
    Predict,
    /// Repeated-sampling simulation study.
    Simulate,
    /// K-fold cross-validation.
    Cv,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(path) = cli.config else {
        eprintln!("error: --config is required");
        return ExitCode::from(EXIT_CONFIG as u8);
    };
    let mut cfg = match RunConfig::load(&path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e) as u8);
        }
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    let command = match cli.command {
        Cmd::Fit => Command::Fit,
        Cmd::Predict => Command::Predict,
        Cmd::Simulate => Command::Simulate,
        Cmd::Cv => Command::Cv,
    };
    match run(command, &cfg) {
        Ok(report) => {
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for p in &report.written {
                println!("{}", p.display());
            }
            if report.converged {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: convergence check failed");
                ExitCode::from(EXIT_NOT_CONVERGED as u8)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
