use std::io::Write;
use std::process::ExitCode;

fn main() -> ExitCode {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let result = pmfrec::configure_threads()
        .and_then(|()| pmfrec::cli::run_from(std::env::args_os(), &mut out));
    let _ = out.flush();
    match result {
        Ok(()) | Err(pmfrec::AppError::OutputClosed) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pmfrec: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
