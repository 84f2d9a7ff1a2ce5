use std::process::ExitCode;

fn main() -> ExitCode {
    // the env cap is honored by construction: execution is sequential
    let _ = curricuids::cli::thread_cap();
    ExitCode::from(curricuids::cli::cli_run(std::env::args()) as u8)
}
