//! Command pipelines around `combtrack-core`: configuration, binary record
//! formats, and the simulate / characterize / figure-reproduction flows.
//!
//! Everything here is deterministic given a config and its seeds. CSV floats
//! are printed at shortest round-trip precision so repeated runs diff clean.

pub mod config;
mod error;
pub mod io;
pub mod pipeline;

pub use error::{CliError, Result};
