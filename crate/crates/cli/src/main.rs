use std::io::Write;
use std::process::ExitCode;

use ablation_lab_cli::{threads_from_env, Cli, CliError, ErrorReport, EXIT_OK, EXIT_VALIDATION};
use clap::error::ErrorKind;
use clap::Parser;

fn report(r: &ErrorReport) {
    eprintln!("{}", serde_json::to_string(r).expect("error report serializes"));
}

fn fail(err: &CliError, command: &str) -> ExitCode {
    report(&err.report(command));
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::from(EXIT_OK as u8);
        }
        Err(e) => {
            report(&ErrorReport {
                kind: "Usage".into(),
                message: e.to_string().trim().to_string(),
                context: serde_json::json!({}),
            });
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
    };
    let name = cli.command.name();
    match threads_from_env() {
        Ok(Some(n)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                return fail(&CliError::Config(e.to_string()), name);
            }
        }
        Ok(None) => {}
        Err(e) => return fail(&e, name),
    }
    match cli.command.execute() {
        Ok(summary) => {
            let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
            // a closed pipe downstream is not a failure of the command
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::from(EXIT_OK as u8)
        }
        Err(e) => fail(&e, name),
    }
}
