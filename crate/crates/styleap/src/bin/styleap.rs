use std::process::ExitCode;

fn main() -> ExitCode {
    styleap::cli::main()
}
