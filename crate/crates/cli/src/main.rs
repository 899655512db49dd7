#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod commands;
mod synth_spec;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, RunConfig};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with 2 on usage errors and 0 for --help / --version.
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Train(a) => commands::train(&RunConfig::from(a)),
        Command::Eval(a) => commands::eval(a),
        Command::Check(a) => commands::check(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Synth(a) => commands::synth(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.exit_code() as u8)
        }
    }
}
