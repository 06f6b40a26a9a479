use clap::Parser;

fn main() {
    let cli = actionspace_cli::Cli::parse();
    std::process::exit(actionspace_cli::execute(&cli));
}
