use clap::Parser;

fn main() {
    env_logger::init();
    let cli = physid::cli::Cli::parse();
    if let Err(e) = physid::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
