//! File formats, plots and the `dcepk` pipeline commands.

pub mod commands;
pub mod error;
pub mod svg;
pub mod volume;

pub use error::{CliError, Result};
