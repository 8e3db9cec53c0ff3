use clap::Parser;
use rlsd::cli::Cli;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    if let Err(err) = rlsd::cli::run(Cli::parse()) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
