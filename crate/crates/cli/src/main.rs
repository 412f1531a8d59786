use std::process::ExitCode;

use clap::Parser;
use primhand_cli::args::Cli;
use primhand_cli::CliError;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version.
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.render().to_string();
            eprintln!("{}", CliError::Usage(message.trim().to_string()).to_json());
            return ExitCode::from(2);
        }
    };
    primhand_cli::init_logging(cli.log_level.as_deref());
    match primhand_cli::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
