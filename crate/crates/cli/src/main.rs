use clap::Parser;
use longic_cli::commands::{execute, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(f) = execute(cli) {
        eprintln!("error: {}", f.message);
        std::process::exit(f.code);
    }
}
