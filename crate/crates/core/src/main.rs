use std::process::ExitCode;

fn main() -> ExitCode {
    match medsad::harness::cli::run(std::env::args_os(), |k| std::env::var(k).ok()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
