//! `tprf` command-line driver.
//!
//! Failures print one line to stderr, `error kind=<kind> message="<text>"`,
//! and exit with status 2 for configuration or usage problems and 1
//! otherwise.

mod args;
mod commands;
mod config;

use std::process::ExitCode;

use anyhow::Result;
use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command, SUBCOMMANDS};

fn error_line(kind: &str, message: &str) -> String {
    format!("error kind={kind} message={message:?}")
}

fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    match err
        .chain()
        .find_map(|e| e.downcast_ref::<tprf_core::Error>())
    {
        Some(e @ (tprf_core::Error::Config(_) | tprf_core::Error::Parse { .. })) => (e.kind(), 2),
        Some(e) => (e.kind(), 1),
        None if err.chain().any(|e| e.is::<std::io::Error>()) => ("io", 1),
        None => ("other", 1),
    }
}

fn run(cli: Cli) -> Result<()> {
    let threads = cli
        .threads
        .or(matches!(cli.command, Command::Bench(_) | Command::Sweep(_)).then_some(1));
    if let Some(n) = threads {
        if n == 0 {
            return Err(tprf_core::Error::Config("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Synth(a) => commands::synth(a),
        Command::Search(a) => commands::search(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench_cmd(a),
        Command::Sweep(a) => commands::sweep(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let argv = match config::expand(std::env::args().collect(), &SUBCOMMANDS) {
        Ok(a) => a,
        Err(e) => {
            let (kind, code) = classify(&e);
            eprintln!("{}", error_line(kind, &format!("{e:#}")));
            return ExitCode::from(code);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            e.exit()
        }
        Err(e) => {
            let text = e.to_string();
            let first = text
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = classify(&e);
            eprintln!("{}", error_line(kind, &format!("{e:#}")));
            ExitCode::from(code)
        }
    }
}
