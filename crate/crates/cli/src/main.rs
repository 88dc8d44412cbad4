//! `cqdd`: gear profiles, dataset generation, training, evaluation and the
//! virtual bench experiments.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.

mod commands;
mod error;
mod manifest;
mod opts;

use std::process::ExitCode;

use error::Failure;

fn run() -> Result<(), Failure> {
    let matches = match opts::cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            // help and version land here too, with their own exit status
            let code = e.exit_code();
            let _ = e.print();
            return if code == 0 {
                Ok(())
            } else {
                Err(Failure {
                    code: error::EXIT_USAGE,
                    message: String::new(),
                })
            };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let config = opts::resolve(name, sub)?;
    match name {
        "profile" => commands::profile(config),
        "gen-data" => commands::gen_data(config),
        "train" => commands::train_cmd(config),
        "eval" => commands::eval_cmd(config),
        "bench" => commands::bench(config),
        "backdrive" => commands::backdrive(config),
        "backlash" => commands::backlash(config),
        other => unreachable!("unhandled subcommand {other}"),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}
