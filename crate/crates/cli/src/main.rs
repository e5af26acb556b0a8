use std::process::ExitCode;

use clap::Parser;
use tramsurv_cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TRAMSURV_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = e.to_json();
            eprintln!("{record}");
            // best effort: the output directory may be what failed
            let _ = std::fs::write(
                cli.command.out_dir().join("error.json"),
                format!("{record}\n"),
            );
            ExitCode::FAILURE
        }
    }
}
