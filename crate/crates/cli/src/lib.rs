//! Configuration loading, experiment orchestration and file export for the
//! `failsafe` binary.

pub mod config;
pub mod export;
pub mod run;

pub use run::{execute, exit_code, RunManifest, Selector};
