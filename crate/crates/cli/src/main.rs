mod cli;
mod commands;
mod output;

use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;

use cli::{Cli, Command};
use output::Outcome;

const EXIT_ASSERTION: u8 = 1;
const EXIT_USAGE: u8 = 2;

/// Reads `NORMLENS_THREADS`; 0 or unset lets rayon pick.
fn configure_threads() -> Result<()> {
    let threads = match std::env::var("NORMLENS_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .with_context(|| format!("NORMLENS_THREADS must be a non-negative integer, got '{v}'"))?,
        Err(std::env::VarError::NotPresent) => 0,
        Err(e) => bail!("NORMLENS_THREADS: {e}"),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the worker pool")
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    let format = cli.format;
    match &cli.command {
        Command::Norm(c) => commands::norm::run(c, format),
        Command::Shift(c) => commands::shift::run(c, format),
        Command::Signflip(a) => commands::signflip::run(a, format),
        Command::Elb(c) => commands::elb::run(c, format),
        Command::Gradcheck(a) => commands::gradcheck::run(a, format),
    }
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    match err.downcast_ref::<normlens::Error>() {
        Some(normlens::Error::InvalidArgument(_)) => "invalid_argument",
        Some(normlens::Error::DegenerateNorm { .. }) => "degenerate_norm",
        Some(normlens::Error::NoSolution(_)) => "no_solution",
        Some(normlens::Error::Parse { .. }) => "parse",
        Some(normlens::Error::Io(_)) => "io",
        None if err.downcast_ref::<std::io::Error>().is_some() => "io",
        None => "usage",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads()
        .and_then(|()| dispatch(&cli))
        .and_then(|outcome| output::emit(&outcome.body, cli.out.as_deref()).map(|()| outcome.passed));
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_ASSERTION),
        Err(err) => {
            let msg = serde_json::json!({
                "error": { "kind": error_kind(&err), "message": format!("{err:#}") }
            });
            eprintln!("{msg}");
            // a solver that cannot meet its tolerance is a failed assertion
            match err.downcast_ref::<normlens::Error>() {
                Some(normlens::Error::NoSolution(_)) => ExitCode::from(EXIT_ASSERTION),
                _ => ExitCode::from(EXIT_USAGE),
            }
        }
    }
}
