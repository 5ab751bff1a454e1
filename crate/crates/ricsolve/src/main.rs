use clap::Parser;
use ricsolve::cli;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = cli::CliArgs::parse();
    std::process::exit(cli::run(args));
}
