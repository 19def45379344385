//! Minimal reverse-mode differentiable tensor engine.
//!
//! A [`Tape`] records primitives over [`Tensor`] values; [`Tape::backward`]
//! sweeps it in reverse. Trainable values live in a [`ParamStore`] and are
//! updated by [`Adam`]. The whole engine is generic over [`Real`] so that
//! gradient checks run the training code path in `f64`.

pub mod checkpoint;
mod float;
pub mod gradcheck;
mod optim;
mod params;
pub mod rng;
pub mod suite;
mod tape;
mod tensor;

pub use float::Real;
pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, grad_check_params, GradCheckReport};
pub use optim::{Adam, AdamConfig};
pub use params::{BufferId, Param, ParamGroup, ParamId, ParamStore, RunningStats};
pub use rng::{seeded_rng, RngStreams};
pub use tape::{BatchNormSpec, Conv2dSpec, Mode, Tape, Var};
pub use tensor::Tensor;
