use std::process::ExitCode;

use clap::Parser;
use neon_experiments::cli::{execute, init_threads, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = std::env::var("NEON_THREADS").ok();
    let result = init_threads(threads.as_deref()).and_then(|()| execute(cli));
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("neon: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
