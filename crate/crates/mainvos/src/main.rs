//! Thin binary wrapper; all behavior lives in the library's `cli` module.

use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(mainvos::cli::main_entry() as u8)
}
