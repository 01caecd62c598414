use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(am_forge_cli::dispatch(std::env::args()) as u8)
}
