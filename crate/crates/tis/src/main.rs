use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = tis::cli::Cli::parse();
    match tis::cli::run(cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("serializable summary"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let report = serde_json::json!({ "error": e.to_string(), "kind": e.kind() });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}
