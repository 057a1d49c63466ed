use std::process::ExitCode;

use clap::Parser;
use robust_sovereign::cli::{run, Cli};
use robust_sovereign::Error;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    match run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::NotConverged { history, .. } = &e {
                eprintln!("last residuals (value, price):");
                for (v, q) in history.iter().rev().take(10).rev() {
                    eprintln!("  {v:.3e} {q:.3e}");
                }
            }
            ExitCode::FAILURE
        }
    }
}
