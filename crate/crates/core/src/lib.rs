//! Visually conditioned mono-to-binaural audio generation.

pub mod autodiff;
pub mod dsp;
pub mod metrics;
pub mod model;
pub mod losses;
pub mod data;
pub mod train;
pub mod inference;
pub mod checks;
pub mod error;

pub use error::{Error, Result};
