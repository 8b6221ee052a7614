//! File formats, run configuration, canned experiments and the command
//! surface around `rlstab-core`.

pub mod commands;
pub mod config;
pub mod csv;
pub mod error;
pub mod experiments;
pub mod io;
pub mod manifest;

pub use config::RunConfig;
pub use error::{LabError, Result};
