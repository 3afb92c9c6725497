//! Experiment configuration and the commands behind the `fgan` binary.

pub mod commands;
pub mod config;
pub mod verify;

pub use commands::*;
pub use config::*;
pub use verify::{run_verify, CheckResult, Perturbation, VerifyOptions, VerifyReport};
