use clap::Parser;

fn main() {
    let cli = mbsdej::cli::Cli::parse();
    std::process::exit(mbsdej::cli::run(cli));
}
