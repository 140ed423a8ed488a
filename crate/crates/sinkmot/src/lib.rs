//! File formats, checkpoints and the command-line driver around `sinkmot-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod embedfile;
pub mod error;
pub mod formats;
pub mod report;
pub mod synthetic;

pub use sinkmot_core as core;
