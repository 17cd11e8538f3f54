mod args;
mod commands;
mod config;
mod plot;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, FromArgMatches};

use args::{Cli, Command};
use config::FileConfig;

/// A failed command: message for standard error plus the exit code
/// (1 usage or config, 2 data, 3 numerical divergence).
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
}

impl From<hyvae_core::Error> for Failure {
    fn from(e: hyvae_core::Error) -> Self {
        use hyvae_core::Error as E;
        let code = match &e {
            E::Config(_) | E::Invalid { .. } | E::Shape { .. } | E::MissingGradient(_) => 1,
            E::Io { .. }
            | E::Parse { .. }
            | E::Data(_)
            | E::DegenerateRange(_)
            | E::Version { .. }
            | E::ShapeInconsistency { .. }
            | E::Truncated(_)
            | E::Malformed(_) => 2,
            E::Divergence { .. } | E::Domain { .. } => 3,
        };
        Failure { code, message: e.to_string() }
    }
}

fn run(argv: Vec<OsString>) -> Result<(), Failure> {
    let matches = match Cli::command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{}", e.render());
            return Ok(());
        }
        Err(e) => return Err(Failure::usage(e.render().to_string().trim_end().trim_start_matches("error: "))),
    };
    let mut cli = Cli::from_arg_matches(&matches).map_err(|e| Failure::usage(e.to_string()))?;

    env_logger::Builder::new()
        .filter_level(if cli.quiet { log::LevelFilter::Error } else { log::LevelFilter::Info })
        .format_target(false)
        .format_timestamp(None)
        .parse_default_env()
        .init();

    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    if !config::explicit(&matches, "seed") && !config::explicit(sub, "seed") {
        if let Some(s) = file.seed {
            cli.seed = s;
        }
    }
    let ctx = commands::Context { seed: cli.seed, quiet: cli.quiet, file, matches: sub.clone() };
    match cli.command {
        Command::Train(a) => commands::train(&ctx, a),
        Command::Forecast(a) => commands::forecast(&ctx, a),
        Command::Evaluate(a) => commands::evaluate(&ctx, a),
        Command::Ablate(a) => commands::ablate(&ctx, a),
        Command::Gridsearch(a) => commands::gridsearch(&ctx, a),
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Plot(a) => commands::plot(&ctx, a),
    }
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
