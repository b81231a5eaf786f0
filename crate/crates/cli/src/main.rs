//! `multiplex` command-line driver.
//!
//! Exit status: 0 on success, 2 for configuration or input errors, 3 when a
//! computation fails.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn run(cli: &Cli) -> multiplex_core::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(multiplex_core::Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| multiplex_core::Error::Config(e.to_string()))?;
    }
    match &cli.command {
        Command::GenTasks(a) => commands::gen_tasks(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::TrainRl(a) => commands::train_rl(a),
        Command::Eval(a) => commands::eval(a),
        Command::Passk(a) => commands::passk(a),
        Command::Viz(a) => commands::viz(a),
        Command::Compare(a) => commands::compare(a),
        Command::ExportPlots(a) => commands::export_plots(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
