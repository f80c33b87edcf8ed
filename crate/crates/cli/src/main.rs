use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    std::process::exit(somnus_cli::execute(somnus_cli::Cli::parse()));
}
