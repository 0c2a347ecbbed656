mod args;
mod commands;
mod data;
mod failure;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command, CommonArgs};
use failure::{Failure, EXIT_USAGE};

fn init_threads(common: &CommonArgs) -> Result<(), Failure> {
    let threads = match common.threads {
        Some(t) => Some(t),
        None => match std::env::var("GENMATCH_THREADS") {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Failure::usage(format!("GENMATCH_THREADS=`{v}` is not a number")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(t) = threads {
        if t == 0 {
            return Err(Failure::usage("thread count must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot start thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Match(a) => {
            let a = a.resolve()?;
            init_threads(&a.common)?;
            commands::run_match(a)
        }
        Command::Evaluate(a) => {
            let a = a.resolve()?;
            init_threads(&a.common)?;
            commands::run_evaluate(a)
        }
        Command::Simulate(a) => {
            let a = a.resolve()?;
            init_threads(&a.common)?;
            commands::run_simulate(a)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
