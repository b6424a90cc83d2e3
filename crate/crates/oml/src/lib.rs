//! Standard-library companion to `oml-core`: dataset file formats, model
//! snapshots, run reports and the `oml` command-line tool.

pub mod cli;
pub mod config;
pub mod formats;
pub mod report;
pub mod snapshot;

pub use oml_core;
