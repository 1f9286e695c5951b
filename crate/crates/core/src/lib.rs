//! Complex-valued enhancement network for noisy bioacoustic recordings, built
//! on a small define-by-run autodiff engine.

pub mod autodiff;
pub mod dsp;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod train;
pub mod cli;
mod error;

pub use error::{Error, Result};
