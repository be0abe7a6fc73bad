//! File formats, run configuration, evaluation and the command line front
//! end for the `kidot-core` reconstruction library.

pub mod ablation;
pub mod checkpoint;
pub mod checks;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod formats;
pub mod run;
pub mod stats;

pub use error::{Error, Result};
pub use kidot_core as core;
