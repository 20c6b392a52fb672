//! File formats, run configuration and experiment commands around
//! [`agmh_core`].
//!
//! The `agmh` binary is a thin front end over [`run`]; everything it does is
//! also reachable from here.

pub mod config;
pub mod error;
pub mod format;
pub mod pgm;
pub mod report;
pub mod run;

pub use config::{RunConfig, Variant};
pub use error::{Error, Result};
pub use format::Checkpoint;
