use clap::Parser;

fn main() {
    let args = fracopt::cli::Args::parse();
    std::process::exit(fracopt::cli::main_with(args));
}
