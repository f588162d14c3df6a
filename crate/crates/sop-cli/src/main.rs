use clap::error::ErrorKind;
use clap::Parser;
use log::LevelFilter;
use sop_cli::commands::{self, Cli, Outcome};

/// Exit codes: 0 success, 1 input or model error, 2 ran but did not converge.
const EXIT_OK: i32 = 0;
const EXIT_INPUT: i32 = 1;
const EXIT_NOT_CONVERGED: i32 = 2;

fn init_logging() -> Result<(), String> {
    let level = match std::env::var("SOP_LOG") {
        Err(_) => LevelFilter::Off,
        Ok(v) => match v.as_str() {
            "quiet" => LevelFilter::Off,
            "info" => LevelFilter::Info,
            "trace" => LevelFilter::Trace,
            other => {
                return Err(format!(
                    "invalid SOP_LOG value '{other}' (expected quiet, info, or trace)"
                ))
            }
        },
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    Ok(())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_INPUT,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(msg) = init_logging() {
        eprintln!("error: {msg}");
        std::process::exit(EXIT_INPUT);
    }
    match commands::run(cli) {
        Ok(Outcome::Converged) | Ok(Outcome::Wrote) => std::process::exit(EXIT_OK),
        Ok(Outcome::NotConverged) => {
            eprintln!(
                "warning: the fit stopped at its iteration cap before converging; \
                 report.json records converged=false"
            );
            std::process::exit(EXIT_NOT_CONVERGED);
        }
        Err(msg) => {
            eprintln!("error: {msg}");
            std::process::exit(EXIT_INPUT);
        }
    }
}
