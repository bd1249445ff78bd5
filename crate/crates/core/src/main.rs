// SPDX-License-Identifier: MIT OR Apache-2.0

fn main() -> std::process::ExitCode {
    std::process::ExitCode::from(aape_core::cli::exit_status(std::env::args_os()))
}
