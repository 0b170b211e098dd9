//! Command-line front end: file formats, reports, and the subcommands.

pub mod args;
pub mod commands;
pub mod error;
pub mod io;
pub mod report;

use args::{Cli, Command};
pub use error::{CliError, CliResult};

pub fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be at least 1".into()));
        }
        // a pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Simulate(a) => commands::cmd_simulate(a),
        Command::Fit(a) => commands::cmd_fit(a),
        Command::Effects(a) => commands::cmd_effects(a),
        Command::Policy(a) => commands::cmd_policy(a),
        Command::Sweep(a) => commands::cmd_sweep(a),
        Command::ImputeCosts(a) => commands::cmd_impute_costs(a),
    }
}
