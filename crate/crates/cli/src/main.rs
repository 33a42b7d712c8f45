use std::process::ExitCode;

use clap::Parser;
use hamrearr::report::CliError;
use hamrearr::{execute, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let env_seed = std::env::var("RL_SEED").ok();
    match execute(&cli, env_seed.as_deref()) {
        Ok((text, holds, config)) => {
            let written = match &config.output {
                Some(path) => std::fs::write(path, &text)
                    .map_err(|source| CliError::Write { path: path.clone(), source }),
                None => {
                    print!("{text}");
                    Ok(())
                }
            };
            if let Err(e) = written {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
            if holds { ExitCode::SUCCESS } else { ExitCode::FAILURE }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
