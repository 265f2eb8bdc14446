use std::process::ExitCode;

use clap::Parser;
use endofair::cli::{self, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let parsed = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let report = serde_json::json!({
                "error": "usage",
                "message": e.to_string(),
                "exit_code": 2,
            });
            eprintln!("{report}");
            return ExitCode::from(2);
        }
    };
    match cli::run(&parsed) {
        Ok(manifest) => {
            println!("{}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", cli::error_json(&e));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
