use std::process::ExitCode;

use clap::Parser;
use deteq_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            if cli.verbose {
                for n in &outcome.report.notes {
                    eprintln!("{n}");
                }
                for p in &outcome.written {
                    eprintln!("wrote {}", p.display());
                }
            }
            for f in &outcome.report.failures {
                eprintln!("failed: {f}");
            }
            if outcome.report.ok() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
