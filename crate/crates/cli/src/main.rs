use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Ok(v) = std::env::var("CRC_THREADS") {
        match v.parse::<usize>() {
            Ok(k) if k > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
                    log::warn!("could not size the worker pool: {e}");
                }
            }
            _ => {
                eprintln!("error: CRC_THREADS must be a positive integer, got '{v}'");
                return ExitCode::from(crc_cli::error::EXIT_USAGE as u8);
            }
        }
    }
    match crc_cli::run_from_args(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
