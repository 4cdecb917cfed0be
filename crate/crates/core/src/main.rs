use clap::Parser;

fn main() {
    let cli = labfm::cli::Cli::parse();
    std::process::exit(labfm::cli::main_with(&cli));
}
