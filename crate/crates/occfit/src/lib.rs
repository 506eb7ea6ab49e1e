//! File formats, checkpoints, run configuration, synthetic shapes and the command line
//! around [`occfit_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
mod error;
pub mod io;
pub mod synth;

pub use error::{Error, Result};
