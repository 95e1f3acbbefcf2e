use clap::Parser;
use planret::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("planret: {e}");
        std::process::exit(e.exit_code());
    }
}
