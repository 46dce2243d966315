use std::process::ExitCode;

use clap::Parser;

use clause::cli::{run, Cli};
use clause::Error;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.into_config().and_then(|cfg| run(&cfg)) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e @ Error::Audit { .. }) => {
            eprintln!("AUDIT FAILURE: {e}");
            ExitCode::from(3)
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
