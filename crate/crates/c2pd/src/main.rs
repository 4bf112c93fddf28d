use c2pd::cli::{main_with, Cli};
use clap::Parser;

fn main() {
    let cli = Cli::parse();
    let code = main_with(cli, &mut std::io::stdout().lock());
    std::process::exit(code);
}
