use std::process::ExitCode;

fn main() -> ExitCode {
    sparsematch::cli::run()
}
