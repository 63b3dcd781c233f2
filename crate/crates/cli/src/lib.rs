//! File formats and command-line front end for `longclust-core`.

pub mod commands;
pub mod error;
pub mod indices;
pub mod labels;
pub mod panel;
pub mod params;

pub use error::{CliError, Result};
