//! Knowledge-informed dynamic optimal transport (KIDOT) for image
//! reconstruction from undersampled or noisy measurements.
//!
//! The crate is `no_std` and only needs `alloc`. It holds every numerical
//! piece of the method: a small reverse-mode gradient tape, the imaging
//! forward models, synthetic data generation, the regularizer field and
//! critic networks, the Euler-discretized transport path, exact optimal
//! transport oracles, the alternating min-max trainer and image metrics.
//! File formats, statistics and the command line live in the `kidot` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod diff;
pub mod error;
pub mod image;
pub mod metrics;
pub mod nets;
pub mod operators;
pub mod ot;
pub mod param;
pub mod rng;
pub mod synth;
pub mod training;
pub mod transport;

pub use error::{Error, Result};
pub use image::Image;
pub use operators::{ForwardModel, Mask, Measurement, MeasurementKind};
pub use param::{ParamLayout, ParamVector};
