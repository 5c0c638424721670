use clap::Parser;

fn main() {
    std::process::exit(wwkam::cli::run(wwkam::cli::Cli::parse()));
}
