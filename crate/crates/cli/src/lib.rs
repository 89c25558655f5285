//! Command implementations behind the `bimanual` binary.

pub mod commands;
pub mod config;

pub use config::RunConfig;
