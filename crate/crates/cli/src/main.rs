use std::io::Write;
use std::process::ExitCode;

use dockflight_cli::{execute, parse_and_validate, EXIT_CHECK_FAILED};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("DOCKFLIGHT_LOG", "warn")).init();
    let args: Vec<String> = std::env::args().collect();
    // help and version are printed by clap itself
    if let Err(e) = dockflight_cli::cli_command().try_get_matches_from(&args) {
        use clap::error::ErrorKind;
        if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
            e.exit();
        }
    }
    let result = parse_and_validate(&args).and_then(|spec| {
        log::debug!("resolved configuration: {}", spec.resolved_config());
        execute(&spec)
    });
    match result {
        Ok(out) => {
            let _ = std::io::stdout().write_all(out.stdout.as_bytes());
            for f in &out.files {
                log::info!("wrote {}", f.display());
            }
            if out.check_failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                for f in &out.check_failures {
                    eprintln!("dockflight: error[check]: {f}");
                }
                ExitCode::from(EXIT_CHECK_FAILED as u8)
            }
        }
        Err(e) => {
            eprintln!("dockflight: error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
