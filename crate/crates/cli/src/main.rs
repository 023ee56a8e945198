use clap::Parser;

fn main() {
    let cli = qlcond_cli::Cli::parse();
    std::process::exit(qlcond_cli::main_with(cli));
}
