use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(chartfit::cli::run(std::env::args()) as u8)
}
