//! Training-pair sampling and train-time frame augmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::image::{Image, Jitter};
use crate::data::manifest::ClipData;
use crate::data::synth::{FRAME_HEIGHT, FRAME_WIDTH};
use crate::dsp::{rms_normalize, Stft, StftConfig, WaveformClip, DEFAULT_TARGET_RMS};
use crate::error::{Error, Result};
use crate::losses::spatial_shuffle;
use crate::model::spectrogram_planes;

pub const SEGMENT_S: f64 = 0.63;
pub const CROP_HEIGHT: usize = 224;
pub const CROP_WIDTH: usize = 448;
pub const MAX_ROW_OFFSET: usize = FRAME_HEIGHT - CROP_HEIGHT;
pub const MAX_COL_OFFSET: usize = FRAME_WIDTH - CROP_WIDTH;

/// Frame shown at the centre of a segment starting at `start_s`, and its
/// temporal neighbour: the previous frame, or the next one at index 0.
pub fn segment_frames(start_s: f64, segment_s: f64, fps: u32, frames: usize) -> Result<(usize, usize)> {
    if frames < 2 {
        return Err(Error::invalid(format!("a neighbouring frame needs at least 2 frames, got {frames}")));
    }
    // A small epsilon keeps exact products such as 3.315 × 10 from rounding down.
    let index = (((start_s + segment_s / 2.0) * fps as f64) + 1e-9).floor() as usize;
    let index = index.min(frames - 1);
    let prev = if index == 0 { 1 } else { index - 1 };
    Ok((index, prev))
}

/// Crop offsets and colour jitter for one training frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub row: usize,
    pub col: usize,
    pub jitter: Jitter,
}

impl AugmentParams {
    pub const TOP_LEFT: AugmentParams = AugmentParams {
        row: 0,
        col: 0,
        jitter: Jitter::IDENTITY,
    };

    /// Centred crop without jitter.
    pub const CENTRE: AugmentParams = AugmentParams {
        row: MAX_ROW_OFFSET / 2,
        col: MAX_COL_OFFSET / 2,
        jitter: Jitter::IDENTITY,
    };

    /// Row offset in `[0, 16]`, column offset in `[0, 32]`, jitter scales in `[1 − spread, 1 + spread]`.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, spread: f64) -> Self {
        let row = rng.gen_range(0..=MAX_ROW_OFFSET);
        let col = rng.gen_range(0..=MAX_COL_OFFSET);
        Self {
            row,
            col,
            jitter: Jitter::draw(rng, spread),
        }
    }
}

/// Resizes to 480 × 240 when needed; other frames keep their size.
pub fn standard_frame(frame: &Image) -> Result<Image> {
    frame.resize_bilinear(FRAME_WIDTH, FRAME_HEIGHT)
}

pub fn augment_with(frame: &Image, params: &AugmentParams) -> Result<Image> {
    let base = standard_frame(frame)?;
    let crop = base.crop(params.row, params.col, CROP_HEIGHT, CROP_WIDTH)?;
    Ok(params.jitter.apply(&crop))
}

/// Random 224 × 448 crop plus colour jitter with scales in `[0.9, 1.1]`.
pub fn augment_train<R: Rng + ?Sized>(frame: &Image, rng: &mut R) -> Result<Image> {
    augment_with(frame, &AugmentParams::draw(rng, 0.1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub segment_s: f64,
    pub target_rms: f64,
    /// Half-width of the jitter scale interval.
    pub jitter: f64,
    pub freq_bins: usize,
    pub pixel_mean: f64,
    pub pixel_std: f64,
    pub shuffle_grid: (usize, usize),
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            segment_s: SEGMENT_S,
            target_rms: DEFAULT_TARGET_RMS,
            jitter: 0.1,
            freq_bins: 256,
            pixel_mean: 0.5,
            pixel_std: 0.25,
            shuffle_grid: (14, 28),
        }
    }
}

/// One training item; spectrogram planes are `[2, F, T]` (real, imaginary),
/// frames are normalized `[3, 224, 448]`.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub clip_id: String,
    pub start: usize,
    pub frame_index: usize,
    pub prev_index: usize,
    pub mono: Vec<f64>,
    pub diff: Vec<f64>,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub frame: Vec<f64>,
    pub positive: Vec<f64>,
    pub shuffled: Vec<f64>,
}

pub fn segment_samples(sample_rate: u32, segment_s: f64) -> usize {
    (segment_s * sample_rate as f64).round() as usize
}

/// Uniform segment start in samples such that the segment lies inside the clip.
pub fn draw_start<R: Rng + ?Sized>(clip_len: usize, segment_len: usize, rng: &mut R) -> Result<usize> {
    if clip_len < segment_len {
        return Err(Error::invalid(format!("clip of {clip_len} samples is shorter than a {segment_len}-sample segment")));
    }
    Ok(rng.gen_range(0..=clip_len - segment_len))
}

/// Cropped spectrogram planes for mono, difference, left and right of an
/// RMS-normalized stereo segment (scale set by the mono mixture).
pub fn segment_planes(segment: &WaveformClip, stft: &Stft, target_rms: f64, freq_bins: usize) -> Result<[Vec<f64>; 4]> {
    let (normalized, _) = rms_normalize(segment, target_rms)?;
    let (l, r) = normalized.stereo_channels()?;
    let m: Vec<f64> = l.iter().zip(r).map(|(a, b)| a + b).collect();
    let d: Vec<f64> = l.iter().zip(r).map(|(a, b)| a - b).collect();
    let planes = |x: &[f64]| spectrogram_planes(&stft.forward(x)?, freq_bins);
    Ok([planes(&m)?, planes(&d)?, planes(l)?, planes(r)?])
}

/// Draws one segment from `clip` with its frames.
pub fn sample_training_pair<R: Rng + ?Sized>(
    clip: &ClipData,
    stft: &Stft,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<TrainingExample> {
    let sr = clip.audio.sample_rate();
    let seg = segment_samples(sr, cfg.segment_s);
    let min_len = seg + (sr as f64 / clip.record.fps as f64).ceil() as usize;
    if clip.audio.len() < min_len {
        return Err(Error::invalid(format!(
            "{}: {} samples is too short for a {seg}-sample segment plus one frame",
            clip.record.clip_id,
            clip.audio.len()
        )));
    }
    let start = draw_start(clip.audio.len(), seg, rng)?;
    let params = AugmentParams::draw(rng, cfg.jitter);
    example_at(clip, stft, cfg, start, &params, rng)
}

/// The example for the segment starting at sample `start`, with fixed
/// augmentation; `rng` only drives the spatial shuffle.
pub fn example_at<R: Rng + ?Sized>(
    clip: &ClipData,
    stft: &Stft,
    cfg: &SampleConfig,
    start: usize,
    params: &AugmentParams,
    rng: &mut R,
) -> Result<TrainingExample> {
    let sr = clip.audio.sample_rate();
    let seg = segment_samples(sr, cfg.segment_s);
    let (frame_index, prev_index) = segment_frames(start as f64 / sr as f64, cfg.segment_s, clip.record.fps, clip.frames)?;
    let segment = clip.audio.segment(start, seg)?;
    let [mono, diff, left, right] = segment_planes(&segment, stft, cfg.target_rms, cfg.freq_bins)?;

    let anchor = augment_with(&clip.frame(frame_index)?, params)?;
    let positive = augment_with(&clip.frame(prev_index)?, params)?;
    let frame = anchor.to_planes(cfg.pixel_mean, cfg.pixel_std);
    let positive = positive.to_planes(cfg.pixel_mean, cfg.pixel_std);
    let shuffled = spatial_shuffle(&frame, 3, CROP_HEIGHT, CROP_WIDTH, cfg.shuffle_grid, rng)?;
    Ok(TrainingExample {
        clip_id: clip.record.clip_id.clone(),
        start,
        frame_index,
        prev_index,
        mono,
        diff,
        left,
        right,
        frame,
        positive,
        shuffled,
    })
}

/// Default STFT for training segments.
pub fn default_stft() -> Result<Stft> {
    Stft::new(StftConfig::default())
}
