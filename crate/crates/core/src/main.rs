use std::process::ExitCode;

fn main() -> ExitCode {
    socrel::cli::run(std::env::args_os())
}
