use clap::Parser;
use ctran::cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    std::process::exit(run(cli, argv));
}
