//! The mono-to-binaural network.
//!
//! An image encoder summarizes the frame; a strided audio encoder contracts
//! the mono spectrogram to a bottleneck, where cross-attention lets audio
//! positions query visual positions. The decoder mirrors the encoder with
//! skip connections and visually conditioned de-normalization at every stage,
//! and ends in a two-channel `tanh` mask that multiplies the mono spectrogram
//! to give the left-minus-right difference spectrogram.

mod attention;
mod avad;
mod config;
mod io;
mod layers;
mod network;

pub use attention::{AttentionOutput, CrossAttention};
pub use avad::{Avad, AvadRoute};
pub use config::ModelConfig;
pub use io::{planes_to_spectrogram, spectrogram_planes};
pub use layers::{Conv, Linear, Norm};
pub use network::{DecoderStage, ForwardOutput, Modulation, Network};
