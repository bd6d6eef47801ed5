//! File formats, configuration and command pipelines around `datm-core`.

pub mod charts;
pub mod cli;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod export;
pub mod formats;
pub mod manifest;
pub mod reports;

pub use error::CliError;
