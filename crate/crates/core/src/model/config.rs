use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network geometry and widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Output channels of each stride-2 image encoder stage.
    pub image_channels: Vec<usize>,
    /// Output channels of each stride-2 audio encoder stage; the decoder mirrors them.
    pub audio_channels: Vec<usize>,
    pub attention_heads: usize,
    pub attention_dim: usize,
    pub avad_hidden: usize,
    /// When false every decoder stage uses plain affine-free batch norm instead of AVAD.
    pub avad: bool,
    /// Frequency bins fed to the network (the Nyquist bin is cropped off).
    pub freq_bins: usize,
    pub frames: usize,
    pub image_height: usize,
    pub image_width: usize,
    /// Pixels are mapped to `(p / 255 − mean) / std` on every channel.
    pub pixel_mean: f64,
    pub pixel_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_channels: vec![32, 64, 128, 256],
            audio_channels: vec![32, 64, 128, 256, 512],
            attention_heads: 4,
            attention_dim: 256,
            avad_hidden: 128,
            avad: true,
            freq_bins: 256,
            frames: 64,
            image_height: 224,
            image_width: 448,
            pixel_mean: 0.5,
            pixel_std: 0.25,
        }
    }
}

impl ModelConfig {
    /// Quarter-width variant sized for single-core training.
    pub fn desk() -> Self {
        Self {
            image_channels: vec![8, 16, 32, 64],
            audio_channels: vec![8, 16, 32, 64, 128],
            attention_dim: 64,
            avad_hidden: 32,
            ..Self::default()
        }
    }

    /// Tiny network used for end-to-end gradient checks.
    pub fn miniature() -> Self {
        Self {
            image_channels: vec![4, 8],
            audio_channels: vec![4, 8],
            attention_heads: 2,
            attention_dim: 8,
            avad_hidden: 4,
            freq_bins: 16,
            frames: 8,
            image_height: 16,
            image_width: 32,
            ..Self::default()
        }
    }

    pub fn visual_grid(&self) -> (usize, usize) {
        let s = 1 << self.image_channels.len();
        (self.image_height / s, self.image_width / s)
    }

    pub fn bottleneck_grid(&self) -> (usize, usize) {
        let s = 1 << self.audio_channels.len();
        (self.freq_bins / s, self.frames / s)
    }

    pub fn visual_channels(&self) -> usize {
        *self.image_channels.last().expect("validated")
    }

    pub fn bottleneck_channels(&self) -> usize {
        *self.audio_channels.last().expect("validated")
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.image_channels.is_empty() || self.image_channels.contains(&0) {
            problems.push("image_channels must be non-empty and positive".to_string());
        }
        if self.audio_channels.is_empty() || self.audio_channels.contains(&0) {
            problems.push("audio_channels must be non-empty and positive".to_string());
        }
        if self.attention_heads == 0 || self.attention_dim % self.attention_heads != 0 {
            problems.push(format!(
                "attention_dim {} is not divisible by attention_heads {}",
                self.attention_dim, self.attention_heads
            ));
        }
        if self.avad_hidden == 0 {
            problems.push("avad_hidden must be positive".into());
        }
        let a = 1usize << self.audio_channels.len();
        if self.freq_bins % a != 0 || self.frames % a != 0 || self.freq_bins == 0 || self.frames == 0 {
            problems.push(format!(
                "spectrogram {}x{} is not divisible by 2^{}",
                self.freq_bins,
                self.frames,
                self.audio_channels.len()
            ));
        }
        let v = 1usize << self.image_channels.len();
        if self.image_height % v != 0 || self.image_width % v != 0 || self.image_height == 0 {
            problems.push(format!(
                "image {}x{} is not divisible by 2^{}",
                self.image_height,
                self.image_width,
                self.image_channels.len()
            ));
        }
        if !(self.pixel_std > 0.0) {
            problems.push("pixel_std must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Canonical JSON form, hashed into checkpoints.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
