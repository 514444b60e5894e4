use std::process::ExitCode;

use clap::Parser;
use log::info;

use perron_chain_cli::{emit, run, Cli, CliError, RunConfig};

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let cfg = RunConfig::from_cli(cli)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {n} worker threads: {e}")))?;
    }
    let t = std::time::Instant::now();
    let outcome = run(&cfg)?;
    info!("{:?} finished in {:.2?}", cfg.mode, t.elapsed());
    emit(&cfg, &outcome.report)?;
    Ok(outcome.code)
}
