//! TOML-configured experiments, reports and their on-disk form.
//!
//! A run is `validate → compute → emit`. Validation rejects unknown labels,
//! unknown fields and missing or non-positive budgets before any simulation
//! starts, and emission refuses to overwrite existing files, so a failed run
//! leaves nothing behind.

mod config;
mod report;
mod run;

pub use config::*;
pub use report::{emit_report, Check, Figure, Metadata, Report, Table};
pub use run::run_experiment;

/// Process exit code for a finished run.
pub fn exit_code(result: &crate::Result<Report>) -> i32 {
    match result {
        Ok(r) if r.passed() => 0,
        Ok(_) => 2,
        Err(_) => 1,
    }
}
