use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(fusemetrics_cli::run() as u8)
}
