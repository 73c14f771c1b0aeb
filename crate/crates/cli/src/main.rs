use clap::Parser;

fn main() {
    let cli = affect_forge_cli::Cli::parse();
    std::process::exit(affect_forge_cli::run(cli));
}
