pub mod app;
pub mod config;
pub mod dataset;
pub mod diagnose;
pub mod error;
pub mod output;
pub mod split;

pub use app::run_from_args;
pub use error::{CliError, Result};
