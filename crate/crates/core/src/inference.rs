//! Full-clip binauralization: sliding windows, the five-region crop
//! schedule, overlap averaging and split evaluation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Mode, ParamStore, Tape, Tensor};
use crate::data::{
    segment_samples, standard_frame, ClipData, Image, Manifest, Split,
    CROP_HEIGHT, CROP_WIDTH, MAX_COL_OFFSET, MAX_ROW_OFFSET, SEGMENT_S,
};
use crate::dsp::{make_mono, recover_waveforms, rms, Channel, Stft, StftConfig, WaveformClip, DEFAULT_TARGET_RMS, SILENCE_RMS};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_clip, ClipMetrics, MetricReport};
use crate::model::{planes_to_spectrogram, spectrogram_planes, Network};

pub const HOP_S: f64 = 0.1;

/// One of the five crop regions of a 480 × 240 frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
    Centre,
}

impl Region {
    pub const CYCLE: [Region; 5] = [
        Region::TopLeft,
        Region::TopRight,
        Region::BottomLeft,
        Region::BottomRight,
        Region::Centre,
    ];

    pub fn for_frame(frame_index: usize) -> Self {
        Self::CYCLE[frame_index % 5]
    }

    /// `(row, col)` of the crop's top-left corner.
    pub fn offset(self) -> (usize, usize) {
        match self {
            Region::TopLeft => (0, 0),
            Region::TopRight => (0, MAX_COL_OFFSET),
            Region::BottomLeft => (MAX_ROW_OFFSET, 0),
            Region::BottomRight => (MAX_ROW_OFFSET, MAX_COL_OFFSET),
            Region::Centre => (MAX_ROW_OFFSET / 2, MAX_COL_OFFSET / 2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start_sample: usize,
    pub start_s: f64,
    pub frame_index: usize,
    pub region: Region,
    /// Aligned to the clip end instead of the hop grid.
    pub tail: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub window_len: usize,
    pub hop: usize,
    pub total_len: usize,
    pub windows: Vec<Window>,
}

/// Windows of 0.63 s every 0.1 s while they fit, plus one window flush with
/// the clip end when samples remain uncovered. Each window is paired with
/// the frame at its centre.
pub fn plan_windows(total_len: usize, sample_rate: u32, fps: u32, frames: usize) -> Result<WindowPlan> {
    let window_len = segment_samples(sample_rate, SEGMENT_S);
    let hop = segment_samples(sample_rate, HOP_S);
    if total_len < window_len {
        return Err(Error::invalid(format!(
            "a {total_len}-sample clip is shorter than one {window_len}-sample window"
        )));
    }
    if fps == 0 || frames == 0 {
        return Err(Error::invalid("a clip needs frames to be binauralized"));
    }
    let window = |start: usize, tail: bool| -> Window {
        let start_s = start as f64 / sample_rate as f64;
        let index = ((start_s + SEGMENT_S / 2.0) * fps as f64 + 1e-9).floor() as usize;
        let frame_index = index.min(frames - 1);
        Window {
            start_sample: start,
            start_s,
            frame_index,
            region: Region::for_frame(frame_index),
            tail,
        }
    };
    let mut windows = Vec::new();
    let mut start = 0;
    while start + window_len <= total_len {
        windows.push(window(start, false));
        start += hop;
    }
    let last = windows.last().expect("at least one window fits").start_sample;
    if last + window_len < total_len {
        windows.push(window(total_len - window_len, true));
    }
    Ok(WindowPlan {
        window_len,
        hop,
        total_len,
        windows,
    })
}

/// The crop a window sees: its scheduled region, or the centre when the schedule is off.
pub fn tdss_crop(frame: &Image, frame_index: usize) -> Result<Image> {
    region_crop(frame, Region::for_frame(frame_index))
}

pub fn region_crop(frame: &Image, region: Region) -> Result<Image> {
    if (frame.width(), frame.height()) != (crate::data::FRAME_WIDTH, crate::data::FRAME_HEIGHT) {
        return Err(Error::invalid(format!(
            "crop regions are defined on 480x240 frames, got {}x{}",
            frame.width(),
            frame.height()
        )));
    }
    let (row, col) = region.offset();
    frame.crop(row, col, CROP_HEIGHT, CROP_WIDTH)
}

/// Mean of the window predictions covering each sample. The running mean
/// `m += (v − m)/k` reproduces a constant exactly, which a sum divided by
/// the count does not (three copies of 0.1 sum to 0.30000000000000004).
pub fn overlap_integrate(windows: &[(usize, Vec<f64>)], total_len: usize) -> Result<Vec<f64>> {
    let mut mean = vec![0.0; total_len];
    let mut count = vec![0u32; total_len];
    for (start, values) in windows {
        let end = start + values.len();
        if end > total_len {
            return Err(Error::invalid(format!("window [{start}, {end}) exceeds {total_len} samples")));
        }
        for (i, &v) in values.iter().enumerate() {
            let (m, k) = (&mut mean[start + i], &mut count[start + i]);
            *k += 1;
            *m += (v - *m) / *k as f64;
        }
    }
    if let Some(t) = count.iter().position(|&c| c == 0) {
        return Err(Error::InvalidState(format!("sample {t} is not covered by any window")));
    }
    Ok(mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropMode {
    /// Five-region schedule driven by the frame index.
    Tdss,
    Centre,
}

impl CropMode {
    pub fn from_flag(tdss: bool) -> Self {
        if tdss {
            CropMode::Tdss
        } else {
            CropMode::Centre
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CropMode::Tdss => "tdss_on",
            CropMode::Centre => "tdss_off",
        }
    }
}

/// Frame access for a clip being binauralized.
pub trait FrameSource {
    fn frame_count(&self) -> usize;
    fn frame(&self, index: usize) -> Result<Image>;
}

impl FrameSource for ClipData {
    fn frame_count(&self) -> usize {
        self.frames
    }

    fn frame(&self, index: usize) -> Result<Image> {
        ClipData::frame(self, index)
    }
}

impl FrameSource for [Image] {
    fn frame_count(&self) -> usize {
        self.len()
    }

    fn frame(&self, index: usize) -> Result<Image> {
        self.get(index)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("frame {index} of {}", self.len())))
    }
}

/// A trained network ready for eval-mode prediction.
#[derive(Debug, Clone)]
pub struct Binauralizer {
    pub net: Network,
    pub store: ParamStore<f32>,
    pub stft: StftConfig,
    pub target_rms: f64,
    pub crop: CropMode,
    /// Windows evaluated concurrently; 1 runs everything on the calling thread.
    pub threads: usize,
}

/// Per-window output: predicted left and right waveforms.
type WindowOutput = (Vec<f64>, Vec<f64>);

impl Binauralizer {
    pub fn new(net: Network, store: ParamStore<f32>, crop: CropMode) -> Self {
        Self {
            net,
            store,
            stft: StftConfig::default(),
            target_rms: DEFAULT_TARGET_RMS,
            crop,
            threads: 1,
        }
    }

    fn crop_for(&self, frame: &Image, frame_index: usize) -> Result<Image> {
        let region = match self.crop {
            CropMode::Tdss => Region::for_frame(frame_index),
            CropMode::Centre => Region::Centre,
        };
        region_crop(&standard_frame(frame)?, region)
    }

    /// Left/right waveforms for one mono window. The window is scaled to the
    /// training RMS before prediction and the outputs scaled back.
    fn predict_window(&self, store: &mut ParamStore<f32>, stft: &Stft, mono: &[f64], frame: &Image) -> Result<WindowOutput> {
        let cfg = &self.net.config;
        let level = rms(mono);
        if !(level > SILENCE_RMS) {
            // Silence maps to silence; the network never sees an unnormalizable window.
            return Ok((vec![0.0; mono.len()], vec![0.0; mono.len()]));
        }
        let scale = self.target_rms / level;
        let scaled: Vec<f64> = mono.iter().map(|v| v * scale).collect();
        let spec = stft.forward(&scaled)?;
        let planes = spectrogram_planes(&spec, cfg.freq_bins)?;
        let frames = spec.frames();
        let pixels = frame.to_planes(cfg.pixel_mean, cfg.pixel_std);

        let mut tape = Tape::<f32>::inference();
        let m = tape.constant(Tensor::from_f64(&[1, 2, cfg.freq_bins, frames], &planes)?);
        let f = tape.constant(Tensor::from_f64(&[1, 3, frame.height(), frame.width()], &pixels)?);
        let out = self.net.forward(&mut tape, store, m, f, Mode::Eval)?;
        let re: Vec<f64> = tape.value(out.pred_re).data().iter().map(|&v| v as f64).collect();
        let im: Vec<f64> = tape.value(out.pred_im).data().iter().map(|&v| v as f64).collect();
        let diff_spec = planes_to_spectrogram(&re, &im, cfg.freq_bins, frames, stft.config())?;
        let diff = stft.inverse(&diff_spec, mono.len())?;
        let (l, r) = recover_waveforms(&scaled, &diff)?;
        let inv = 1.0 / scale;
        Ok((l.into_iter().map(|v| v * inv).collect(), r.into_iter().map(|v| v * inv).collect()))
    }

    /// Stereo clip of the same length as `mono`.
    pub fn binauralize<F: FrameSource + Sync + ?Sized>(&self, mono: &WaveformClip, fps: u32, frames: &F) -> Result<WaveformClip> {
        let samples = mono
            .channel(Channel::Mono)
            .ok_or_else(|| Error::invalid("binauralize expects a mono clip"))?;
        let plan = plan_windows(samples.len(), mono.sample_rate(), fps, frames.frame_count())?;
        let stft = Stft::new(self.stft)?;
        let run = |store: &mut ParamStore<f32>, w: &Window| -> Result<WindowOutput> {
            let frame = self.crop_for(&frames.frame(w.frame_index)?, w.frame_index)?;
            let seg = &samples[w.start_sample..w.start_sample + plan.window_len];
            self.predict_window(store, &stft, seg, &frame).map_err(|e| {
                Error::InvalidState(format!("window at {:.2}s (frame {}): {e}", w.start_s, w.frame_index))
            })
        };
        let outputs: Vec<WindowOutput> = if self.threads <= 1 {
            let mut store = self.store.clone();
            plan.windows.iter().map(|w| run(&mut store, w)).collect::<Result<_>>()?
        } else {
            let per = plan.windows.len().div_ceil(self.threads);
            let chunks: Vec<Result<Vec<WindowOutput>>> = std::thread::scope(|s| {
                let handles: Vec<_> = plan
                    .windows
                    .chunks(per)
                    .map(|chunk| {
                        let run = &run;
                        s.spawn(move || {
                            let mut store = self.store.clone();
                            chunk.iter().map(|w| run(&mut store, w)).collect::<Result<Vec<_>>>()
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("window worker panicked")).collect()
            });
            let mut all = Vec::with_capacity(plan.windows.len());
            for c in chunks {
                all.extend(c?);
            }
            all
        };
        let (mut left, mut right) = (Vec::new(), Vec::new());
        for (w, (l, r)) in plan.windows.iter().zip(outputs) {
            left.push((w.start_sample, l));
            right.push((w.start_sample, r));
        }
        WaveformClip::stereo(
            overlap_integrate(&left, samples.len())?,
            overlap_integrate(&right, samples.len())?,
            mono.sample_rate(),
        )
    }
}

/// What produces the predicted binaural audio during evaluation.
#[derive(Debug, Clone)]
pub enum Predictor {
    Model(Box<Binauralizer>),
    /// Both ears receive half the mono mixture.
    MonoMono,
    /// The true difference signal pushed through the same window, crop,
    /// inverse-STFT and averaging path as a model prediction; bounds what the
    /// pipeline itself loses.
    Oracle { stft: StftConfig, freq_bins: usize },
}

impl Predictor {
    pub fn label(&self) -> String {
        match self {
            Predictor::Model(b) => format!("model_{}", b.crop.label()),
            Predictor::MonoMono => "mono_mono_baseline".into(),
            Predictor::Oracle { .. } => "oracle_difference".into(),
        }
    }

    pub fn predict(&self, clip: &ClipData) -> Result<WaveformClip> {
        let mono = make_mono(&clip.audio)?;
        let m = mono.channel(Channel::Mono).expect("make_mono returns mono");
        match self {
            Predictor::Model(b) => b.binauralize(&mono, clip.record.fps, clip),
            Predictor::MonoMono => {
                let half: Vec<f64> = m.iter().map(|v| 0.5 * v).collect();
                WaveformClip::stereo(half.clone(), half, mono.sample_rate())
            }
            Predictor::Oracle { stft, freq_bins } => {
                let (l, r) = clip.audio.stereo_channels()?;
                let d: Vec<f64> = l.iter().zip(r).map(|(a, b)| a - b).collect();
                let plan = plan_windows(m.len(), mono.sample_rate(), clip.record.fps, clip.frames)?;
                let stft = Stft::new(*stft)?;
                let (mut left, mut right) = (Vec::new(), Vec::new());
                for w in &plan.windows {
                    let span = w.start_sample..w.start_sample + plan.window_len;
                    let spec = stft.forward(&d[span.clone()])?;
                    let planes = spectrogram_planes(&spec, *freq_bins)?;
                    let plane = planes.len() / 2;
                    let cropped = planes_to_spectrogram(&planes[..plane], &planes[plane..], *freq_bins, spec.frames(), stft.config())?;
                    let diff = stft.inverse(&cropped, plan.window_len)?;
                    let (wl, wr) = recover_waveforms(&m[span], &diff)?;
                    left.push((w.start_sample, wl));
                    right.push((w.start_sample, wr));
                }
                WaveformClip::stereo(
                    overlap_integrate(&left, m.len())?,
                    overlap_integrate(&right, m.len())?,
                    mono.sample_rate(),
                )
            }
        }
    }
}

/// Metrics for every clip of a split plus the clips that failed.
#[derive(Debug, Clone)]
pub struct SplitEvaluation {
    pub report: MetricReport,
    pub skipped: Vec<(String, String)>,
}

/// Binauralizes every clip of `split` from its mono mixture and scores it
/// against the recorded stereo. A failing clip is logged and skipped.
pub fn evaluate_split(
    manifest: &Manifest,
    split: Split,
    predictor: &Predictor,
    stft: &StftConfig,
    config: serde_json::Value,
) -> Result<SplitEvaluation> {
    let mut rows: Vec<ClipMetrics> = Vec::new();
    let mut skipped = Vec::new();
    for record in manifest.split(split) {
        let result = manifest
            .open_clip(record)
            .and_then(|clip| {
                let pred = predictor.predict(&clip)?;
                evaluate_clip(&record.clip_id, &pred, &clip.audio, stft)
            });
        match result {
            Ok(m) => rows.push(m),
            Err(e) => {
                log::warn!("skipping {}: {e}", record.clip_id);
                skipped.push((record.clip_id.clone(), e.to_string()));
            }
        }
    }
    let mut config = config;
    if let serde_json::Value::Object(map) = &mut config {
        map.insert("predictor".into(), serde_json::json!(predictor.label()));
        map.insert("split".into(), serde_json::json!(split.to_string()));
        map.insert(
            "skipped".into(),
            serde_json::json!(skipped.iter().map(|(id, _)| id.clone()).collect::<Vec<_>>()),
        );
    }
    Ok(SplitEvaluation {
        report: MetricReport::new(config, rows),
        skipped,
    })
}

/// Frame-sequence reader for a directory of `000000.png`, `000001.png`, ….
#[derive(Debug, Clone)]
pub struct FrameDir {
    dir: std::path::PathBuf,
    count: usize,
}

impl FrameDir {
    pub fn open(dir: &Path) -> Result<Self> {
        let mut count = 0;
        while dir.join(crate::data::frame_file_name(count)).is_file() {
            count += 1;
        }
        if count == 0 {
            return Err(Error::invalid(format!("{}: no frames named 000000.png onwards", dir.display())));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            count,
        })
    }
}

impl FrameSource for FrameDir {
    fn frame_count(&self) -> usize {
        self.count
    }

    fn frame(&self, index: usize) -> Result<Image> {
        if index >= self.count {
            return Err(Error::invalid(format!("frame {index} of {}", self.count)));
        }
        Image::read_png(&self.dir.join(crate::data::frame_file_name(index)))
    }
}

/// Writes an 8-bit greyscale log-magnitude image of a spectrogram, one
/// pixel per bin, highest frequency in the top row. `20·log10(|z| + 1e-8)`
/// is mapped linearly from `[peak − 80 dB, peak]` to `[0, 255]`.
pub fn write_magnitude_png(spec: &crate::dsp::ComplexSpectrogram, path: &Path) -> Result<()> {
    let (f, t) = (spec.freq_bins(), spec.frames());
    let db: Vec<f64> = spec.bins().iter().map(|z| 20.0 * (z.norm() + 1e-8).log10()).collect();
    let peak = db.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut data = Vec::with_capacity(f * t);
    for row in 0..f {
        let fi = f - 1 - row;
        for k in 0..t {
            data.push(((db[fi * t + k] - (peak - 80.0)) / 80.0 * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    crate::data::write_gray_png(path, t, f, &data)
}
