use std::process::ExitCode;

use clap::Parser;
use mrstd_cli::{run, Cli, CliError, EXIT_INPUT};

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(EXIT_INPUT as u8);
        }
    }
    let result = run(&cli).and_then(|out| match &cli.output {
        Some(path) => std::fs::write(path, out).map_err(|e| CliError::input(format!("{}: {e}", path.display()))),
        None => {
            print!("{out}");
            Ok(())
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
