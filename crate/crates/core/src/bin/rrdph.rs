use std::process::ExitCode;

fn main() -> ExitCode {
    rrdph::cli::main()
}
