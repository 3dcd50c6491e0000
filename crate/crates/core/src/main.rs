use std::io;
use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;

use gcn2cl::cli::{run, Args};

fn main() -> ExitCode {
    let args = Args::parse();
    match try_main(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gcn2cl: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn try_main(args: &Args) -> Result<()> {
    let stdout = io::stdout();
    let stderr = io::stderr();
    run(args, &mut stdout.lock(), &mut stderr.lock())?;
    Ok(())
}
