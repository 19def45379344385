//! In-memory fixtures for the benchmarks; nothing touches the disk.

use binaural_core::autodiff::seeded_rng;
use binaural_core::data::{blob_frame, Image, CROP_HEIGHT, CROP_WIDTH};
use binaural_core::dsp::WaveformClip;
use binaural_core::train::Batch;
use rand::Rng;

pub const SAMPLE_RATE: u32 = 16_000;

/// Uniform noise in `[-0.5, 0.5)`.
pub fn noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeded_rng(seed);
    (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect()
}

pub fn mono_clip(seconds: f64, seed: u64) -> WaveformClip {
    let len = (seconds * SAMPLE_RATE as f64) as usize;
    WaveformClip::mono(noise(len, seed), SAMPLE_RATE).expect("valid clip")
}

/// Frames of a blob sweeping left to right, one per 0.1 s.
pub fn sweep_frames(count: usize) -> Vec<Image> {
    (0..count).map(|i| blob_frame(i as f64 / count.max(2) as f64)).collect()
}

/// A training batch of `n` random examples with `freq_bins × frames` spectrograms.
pub fn random_batch(n: usize, freq_bins: usize, frames: usize, seed: u64) -> Batch {
    let spec = n * 2 * freq_bins * frames;
    let image = n * 3 * CROP_HEIGHT * CROP_WIDTH;
    Batch {
        n,
        grid: (freq_bins, frames),
        image: (CROP_HEIGHT, CROP_WIDTH),
        mono: noise(spec, seed),
        diff: noise(spec, seed + 1),
        left: noise(spec, seed + 2),
        right: noise(spec, seed + 3),
        frames: noise(image, seed + 4),
        positives: noise(image, seed + 5),
        shuffled: noise(image, seed + 6),
    }
}
