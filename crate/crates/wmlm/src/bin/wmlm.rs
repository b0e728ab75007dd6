use clap::Parser;

fn main() {
    let cli = wmlm::cli::Cli::parse();
    if let Err(e) = wmlm::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
