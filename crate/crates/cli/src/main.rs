mod args;
mod bench;
mod config;
mod generate;
mod io;
mod train;
mod verify;

use std::process::ExitCode;

use args::{AdaptiveArg, Cli, Command};
use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};
use sdsat::{AdaptiveTokens, ModelParams};

pub(crate) fn adaptive_tokens(arg: AdaptiveArg, params: &ModelParams) -> AdaptiveTokens {
    match arg {
        AdaptiveArg::Identical => AdaptiveTokens::identical(params.config()),
        AdaptiveArg::Diverse => AdaptiveTokens::diverse(params.config()),
    }
}

fn main() -> ExitCode {
    let argv = match config::expand_args(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => Cli::command()
            .error(ErrorKind::InvalidValue, format!("{e:#}"))
            .exit(),
    };
    let cli = Cli::parse_from(argv);

    if let Command::Train(a) = &cli.command {
        if !a.corpus.is_file() {
            Cli::command()
                .error(
                    ErrorKind::ValueValidation,
                    format!("corpus {} does not exist or is not a file", a.corpus.display()),
                )
                .exit();
        }
    }

    let result = match &cli.command {
        Command::Train(a) => train::run(a).map(|_| true),
        Command::Bench(a) => bench::run(a).map(|_| true),
        Command::Verify(a) => verify::run(a),
        Command::Generate(a) => generate::run(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
