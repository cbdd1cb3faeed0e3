use clap::Parser;

fn main() {
    let args = pump_cli::cli::Cli::parse();
    std::process::exit(pump_cli::cli::execute(args));
}
