use std::process::ExitCode;

use casgp_cli::error::one_line;
use casgp_cli::{run, Cli};
use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", one_line("usage", first.trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    let stdout = std::io::stdout();
    let result = cli
        .flags
        .resolve()
        .and_then(|cfg| run(cli.command, &cfg, &mut stdout.lock()));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.one_line());
            ExitCode::FAILURE
        }
    }
}
