//! Command-line front end for tactilekit, also usable as a library.

pub mod args;
pub mod bench;
pub mod commands;
pub mod report;

use std::io::Write;

pub use args::Cli;

/// Exit status for a finished run: 0 on success, 1 when the command failed.
pub fn run(cli: &Cli, out: &mut dyn Write) -> i32 {
    match commands::run(cli, out) {
        Ok(()) => 0,
        // A closed pipe (`| head`) is the reader's choice, not a failure.
        Err(e) if is_broken_pipe(&e) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}
