use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use journey_cli::error::ErrorRecord;
use journey_cli::Cli;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let rec = ErrorRecord::validation(e.kind().to_string());
            eprintln!("{}", serde_json::to_string(&rec).unwrap_or_default());
            return ExitCode::from(rec.exit_code as u8);
        }
    };
    ExitCode::from(journey_cli::execute(&cli) as u8)
}
