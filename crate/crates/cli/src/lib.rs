//! Command-line pipeline and HTTP annotation service for `cpforge`.

use std::ffi::OsString;

use clap::Parser;

pub mod commands;
pub mod config;
pub mod error;
pub mod server;
pub mod validate;

pub use error::AppError;

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 on success, 1 on domain errors, 2 on usage errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match commands::Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match commands::execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
