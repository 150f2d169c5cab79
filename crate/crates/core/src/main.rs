use std::process::ExitCode;

fn main() -> ExitCode {
    mpe_psn::cli::main_with_args(std::env::args_os())
}
