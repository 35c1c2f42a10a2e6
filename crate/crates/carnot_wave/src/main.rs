use std::process::ExitCode;

fn main() -> ExitCode {
    let code = carnot_wave::cli::run_from(std::env::args_os());
    ExitCode::from(code as u8)
}
