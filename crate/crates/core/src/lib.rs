//! Dual-branch transformer/RRDB super-resolution: generator,
//! spectrally-normalized patch discriminator, the full loss system,
//! image-quality metrics, dataset construction and an adversarial
//! training harness.

pub mod checkpoint;
pub mod config;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod imaging;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
