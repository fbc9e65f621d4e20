use std::process::ExitCode;

mod commands;
mod config;
mod rundir;

use commands::{CliError, SUBCOMMANDS};

const USAGE: &str =
    "usage: rdsteer <train|eval|sweep|simulate|render> [--config=FILE] [--key=value ...]

Every key has a default; see docs/config.md. Flags override the config file.
Set RDSTEER_THREADS (or --threads) to size the worker pool; 1 runs sequentially.";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(sub) = args.first() else {
        eprintln!("{USAGE}");
        return ExitCode::from(2);
    };
    if sub == "-h" || sub == "--help" || sub == "help" {
        println!("{USAGE}");
        return ExitCode::SUCCESS;
    }
    let result = if SUBCOMMANDS.contains(&sub.as_str()) {
        config::parse_flags(&args[1..])
            .and_then(|(file, flags)| config::resolve(file.as_deref(), flags))
            .map_err(CliError::from)
            .and_then(|cfg| commands::run(sub, &cfg))
    } else {
        Err(CliError::new(
            "usage_error",
            format!(
                "unknown subcommand {sub:?}; expected one of {}",
                SUBCOMMANDS.join(", ")
            ),
        ))
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
