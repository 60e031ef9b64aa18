use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(iro_cli::command::run(std::env::args_os()))
}
