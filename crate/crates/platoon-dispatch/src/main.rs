use clap::Parser;
use platoon_dispatch::cli;

fn main() {
    let parsed = cli::Cli::parse();
    if let Err(err) = cli::run(parsed) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
