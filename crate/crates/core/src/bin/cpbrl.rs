use clap::Parser;

fn main() {
    let cli = cpbrl::cli::Cli::parse();
    if let Err(e) = cpbrl::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
