//! Configuration, file formats and command implementations behind the
//! `micropolar` binary.

pub mod commands;
pub mod config;
pub mod output;

pub use config::{parse_config, render_config, ConfigError, InitialConfig, Preset, RunConfig};
