use std::process::ExitCode;

use clap::Parser;
use tracing_subscriber::EnvFilter;

use asm_core::cli::{self, Cli};

fn main() -> ExitCode {
    let filter = EnvFilter::try_from_env("ASM_LOG").unwrap_or_else(|_| EnvFilter::new("warn"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();

    let args = Cli::parse();
    match cli::run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
