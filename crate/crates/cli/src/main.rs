use std::process::ExitCode;

use clap::Parser;
use uvlab_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = run(&cli);
    if let Some(msg) = &outcome.message {
        eprintln!("uvlab {}: {msg}", cli.command.name());
    }
    if let Some(dir) = &outcome.out_dir {
        if outcome.exit_code == 0 {
            println!("wrote {}", dir.display());
        }
    }
    ExitCode::from(outcome.exit_code as u8)
}
