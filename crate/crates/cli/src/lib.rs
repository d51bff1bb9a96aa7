//! Operator surface: config loading and the pipeline stages.

pub mod config;
pub mod error;
pub mod stages;
pub mod store;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use stages::{run, Command, Outcome};
