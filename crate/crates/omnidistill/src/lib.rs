//! File formats, configuration and the `omnidistill` command line around
//! [`omnidistill_core`].

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod report;
pub mod runlog;
pub mod synth_spec;

pub use config::PipelineConfig;
pub use error::Error;
pub use omnidistill_core;
