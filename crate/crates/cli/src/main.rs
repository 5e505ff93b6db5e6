use std::io::Write;

use clap::Parser;
use tactilekit_cli::Cli;

fn main() {
    // Usage errors exit with 2, --help/--version with 0.
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let code = tactilekit_cli::run(&cli, &mut out);
    let _ = out.flush();
    std::process::exit(code);
}
