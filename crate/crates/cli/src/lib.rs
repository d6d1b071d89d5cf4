//! Configuration, orchestration and result files for pamkit experiments.

pub mod config;
pub mod envelope;
pub mod error;
pub mod plotdata;
pub mod run;
pub mod selftest;

pub use config::{Experiment, RunConfig};
pub use envelope::Envelope;
pub use error::CliError;
pub use run::{execute, run};

/// Identifier of this build: crate version plus the abbreviated commit.
pub const BUILD_ID: &str = env!("PAMKIT_BUILD_ID");
