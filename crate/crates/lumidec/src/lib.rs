//! Files, datasets and the command line around `lumidec-core`.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod files;
pub mod image_io;

pub use error::{Error, ErrorClass, Result};
