//! Command-line front end of `wgflow`: TOML configs, run orchestration and
//! CSV/JSON artifacts.

// NaN must fail validation, so `!(x > 0.0)` is intended.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{cmd_compare, cmd_diagnose, cmd_run, CompareReport, RunOptions};
pub use config::RunConfig;
pub use error::CliError;
