use clap::Parser;

fn main() {
    let cli = atomdl::cli::Cli::parse();
    std::process::exit(atomdl::cli::run(cli));
}
