//! Command-line driver and HTTP service for the `splat4d` engine.

pub mod commands;
pub mod request;
pub mod service;
pub mod settings;

pub use commands::CliError;
