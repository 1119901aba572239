//! Configuration, sweep execution and result files for the `simulate`
//! command.

pub mod config;
pub mod output;
pub mod run;

pub use config::{parse_config, parse_config_str, ConfigError, RunConfig};
