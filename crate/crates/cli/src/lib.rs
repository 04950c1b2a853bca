//! Command-line front end and HTTP service over `doseopt-core`.
//!
//! Both paths deserialize the same request documents and call the same core functions, so a
//! request body gives byte-identical JSON whether it is posted to the service or passed to the
//! matching subcommand.

pub mod commands;
pub mod service;

use doseopt_core::Error;

/// Process exit code for success.
pub const EXIT_OK: i32 = 0;
/// Bad input: unreadable files, malformed JSON or CSV, values outside their domain.
pub const EXIT_VALIDATION: i32 = 2;
/// The numerics failed on valid input (singular information, no convergence, ...).
pub const EXIT_NUMERICAL: i32 = 3;

/// Maps an error chain to the exit code contract.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_VALIDATION,
    }
}
