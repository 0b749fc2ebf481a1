use std::io::Write;

use clap::Parser;

use pdstab_cli::run::{execute, Cli};

fn main() {
    let outcome = execute(Cli::parse());
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(outcome.stdout.as_bytes());
    let _ = stdout.flush();
    if !outcome.stderr.is_empty() {
        let _ = std::io::stderr().write_all(outcome.stderr.as_bytes());
    }
    std::process::exit(outcome.code);
}
