use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    // clap itself exits with code 2 on flag misuse, matching the
    // validation class below.
    let cli = relpose_cli::args::Cli::parse();
    match relpose_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
