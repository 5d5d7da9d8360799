use clap::Parser;

fn main() {
    let cli = hlnet::cli::Cli::parse();
    if let Err(e) = hlnet::cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
