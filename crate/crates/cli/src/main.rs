use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = mapweld::Cli::parse();
    ExitCode::from(mapweld::run(cli))
}
