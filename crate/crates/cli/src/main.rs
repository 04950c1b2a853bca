use clap::Parser;
use doseopt_cli::commands::{execute, Cli};
use doseopt_cli::exit_code;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = execute(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(exit_code(&e));
    }
}
