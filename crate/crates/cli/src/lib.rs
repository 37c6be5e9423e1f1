//! Command-line front end: configuration, model archives and the
//! fit / predict / simulate / cv commands.

pub mod archive;
pub mod commands;
pub mod config;

pub use commands::{cmd_cv, cmd_fit, cmd_predict, cmd_simulate, Report};
pub use config::{Command, RunConfig};

use zisae_core::SaeError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_NOT_CONVERGED: i32 = 5;

/// Exit code for an error.
pub fn exit_code(err: &SaeError) -> i32 {
    match err {
        SaeError::Config(_) => EXIT_CONFIG,
        SaeError::Numerical(_) => EXIT_NUMERICAL,
        SaeError::Io { .. }
        | SaeError::Parse { .. }
        | SaeError::NoRecords(_)
        | SaeError::InvalidInput(_)
        | SaeError::Domain(_)
        | SaeError::Dimension(_)
        | SaeError::UnknownCounty(_) => EXIT_DATA,
    }
}

/// Run one command on a loaded config.
pub fn run(command: Command, cfg: &RunConfig) -> Result<Report, SaeError> {
    if let Some(n) = cfg.workers {
        // a global pool can only be built once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match command {
        Command::Fit => cmd_fit(cfg),
        Command::Predict => cmd_predict(cfg),
        Command::Simulate => cmd_simulate(cfg),
        Command::Cv => cmd_cv(cfg),
    }
}
