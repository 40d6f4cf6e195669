mod commands;
mod config;

use std::process::ExitCode;

use clap::error::ErrorKind;
use finslerconv::par::{set_execution, Execution};

use commands::CliError;
use config::{Cmd, ExperimentConfig};

const THREADS_VAR: &str = "FINSLERCONV_THREADS";

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_VAR} must be a positive integer, got {v:?}")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn set_mode(cfg: &ExperimentConfig) -> Result<(), CliError> {
    match cfg.str("execution") {
        "sequential" => set_execution(Execution::Sequential),
        #[cfg(feature = "parallel")]
        "parallel" => set_execution(Execution::Parallel),
        #[cfg(not(feature = "parallel"))]
        "parallel" => {
            eprintln!("built without parallel support; running sequentially");
            set_execution(Execution::Sequential)
        }
        other => {
            return Err(CliError::Usage(format!(
                "execution must be parallel or sequential, got {other:?}"
            )))
        }
    }
    Ok(())
}

fn real_main() -> Result<(), CliError> {
    let matches = match config::cli().try_get_matches() {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.render().to_string().trim_end().to_string())),
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let cmd = Cmd::ALL
        .into_iter()
        .find(|c| c.name() == name)
        .expect("registered subcommand");
    let cfg = ExperimentConfig::from_matches(cmd, sub)?;
    if sub.get_flag("dump-config") {
        print!("{}", cfg.dump());
        return Ok(());
    }
    init_threads()?;
    if cmd != Cmd::Phantom {
        set_mode(&cfg)?;
    }
    commands::run(&cfg)
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
