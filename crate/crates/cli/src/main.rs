mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use oda_core::OdaError;

use args::{Cli, Command};

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NON_FINITE: u8 = 4;
const EXIT_INVARIANT: u8 = 5;

fn exit_code(err: &OdaError) -> u8 {
    match err {
        OdaError::InvalidConfig(_) | OdaError::InvalidTemperature(_) => EXIT_USAGE,
        OdaError::Io { .. } | OdaError::Format(_) => EXIT_IO,
        OdaError::NonFiniteLoss { .. } | OdaError::NonFiniteGradient => EXIT_NON_FINITE,
        _ => EXIT_INVARIANT,
    }
}

/// `adapt` has no source flag at all; catch attempts before clap reports a
/// less helpful "unexpected argument".
fn rejects_source_for_adapt(argv: &[String]) -> bool {
    argv.get(1).is_some_and(|c| c == "adapt")
        && argv[2..]
            .iter()
            .any(|a| a == "--source" || a.starts_with("--source="))
}

fn init_logging() {
    let level = std::env::var("ODA_LOG_LEVEL").unwrap_or_else(|_| "error".into());
    env_logger::Builder::new()
        .parse_filters(&level)
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    if rejects_source_for_adapt(&argv) {
        eprintln!("error: adapt is source-free; it takes no --source data");
        return ExitCode::from(EXIT_USAGE);
    }
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging();

    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::ZeroShot(a) => commands::zero_shot(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::Train(a) => commands::train(a),
        Command::Adapt(a) => commands::adapt(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
