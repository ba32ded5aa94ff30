mod cli;

use std::panic;
use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    // the default hook still prints the message to stderr
    match panic::catch_unwind(|| cli::main_with(argv, &mut std::io::stdout().lock())) {
        Ok(code) => ExitCode::from(code as u8),
        Err(_) => ExitCode::from(cli::EXIT_INTERNAL as u8),
    }
}
