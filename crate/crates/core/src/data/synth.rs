//! Synthetic binaural scenes: one sound source panned with a constant-power
//! law, and a frame sequence showing a bright square at the source azimuth.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::image::Image;
use crate::dsp::WaveformClip;
use crate::error::{Error, Result};

pub const FRAME_WIDTH: usize = 480;
pub const FRAME_HEIGHT: usize = 240;
pub const BACKGROUND: u8 = 16;
pub const BLOB: u8 = 230;
pub const BLOB_SIZE: usize = 40;
/// Largest interaural delay, reached at full left or full right.
pub const MAX_ITD_S: f64 = 0.6e-3;

/// One sinusoidal component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Partial {
    pub freq: f64,
    pub phase: f64,
    pub amp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    /// A few sinusoids at unrelated frequencies.
    Tones,
    /// Band-limited noise built from many equal-amplitude sinusoids.
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub kind: SourceKind,
    pub partials: Vec<Partial>,
}

/// Peak bound of the rendered source: partial amplitudes sum to this.
const PEAK: f64 = 0.9;
const F_LO: f64 = 200.0;
const F_HI: f64 = 4000.0;
const NOISE_PARTIALS: usize = 48;

impl Source {
    pub fn tones<R: Rng + ?Sized>(rng: &mut R, count: usize) -> Self {
        let mut partials: Vec<Partial> = (0..count.max(1))
            .map(|_| Partial {
                freq: rng.gen_range(F_LO..=F_HI),
                phase: rng.gen_range(0.0..2.0 * PI),
                amp: rng.gen_range(0.3..=1.0),
            })
            .collect();
        let total: f64 = partials.iter().map(|p| p.amp).sum();
        partials.iter_mut().for_each(|p| p.amp *= PEAK / total);
        Self {
            kind: SourceKind::Tones,
            partials,
        }
    }

    /// Noise over a random sub-band of at least 800 Hz inside the tone range.
    pub fn noise<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let lo = rng.gen_range(F_LO..=F_HI - 800.0);
        let hi = rng.gen_range(lo + 800.0..=F_HI);
        let amp = PEAK / NOISE_PARTIALS as f64;
        let partials = (0..NOISE_PARTIALS)
            .map(|_| Partial {
                freq: rng.gen_range(lo..=hi),
                phase: rng.gen_range(0.0..2.0 * PI),
                amp,
            })
            .collect();
        Self {
            kind: SourceKind::Noise,
            partials,
        }
    }

    pub fn sample(&self, t: f64) -> f64 {
        self.partials
            .iter()
            .map(|p| p.amp * (2.0 * PI * p.freq * t + p.phase).sin())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Motion {
    Static,
    /// Azimuth moves linearly from the scene azimuth to `end` over the clip.
    Drift { end: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// 0 is full left, 1 full right.
    pub azimuth: f64,
    pub source: Source,
    pub motion: Motion,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub fps: u32,
    /// Delay the far ear by up to [`MAX_ITD_S`] in addition to the level difference.
    pub itd: bool,
}

/// Rendered scene.
#[derive(Debug, Clone)]
pub struct SyntheticClip {
    pub audio: WaveformClip,
    pub frames: Vec<Image>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let end = match self.motion {
            Motion::Static => self.azimuth,
            Motion::Drift { end } => end,
        };
        let mut problems = Vec::new();
        if !(0.0..=1.0).contains(&self.azimuth) || !(0.0..=1.0).contains(&end) {
            problems.push(format!("azimuths {} → {end} must lie in [0, 1]", self.azimuth));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            problems.push(format!("duration {} must be positive", self.duration_s));
        }
        if self.sample_rate == 0 || self.fps == 0 {
            problems.push("sample_rate and fps must be positive".into());
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if self.source.partials.iter().any(|p| !(p.freq > 0.0 && p.freq < nyquist)) {
            problems.push(format!("partial frequencies must lie in (0, {nyquist})"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Azimuth at time `t` seconds.
    pub fn azimuth_at(&self, t: f64) -> f64 {
        match self.motion {
            Motion::Static => self.azimuth,
            Motion::Drift { end } => {
                let u = (t / self.duration_s).clamp(0.0, 1.0);
                self.azimuth + (end - self.azimuth) * u
            }
        }
    }

    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }

    pub fn num_frames(&self) -> usize {
        (self.duration_s * self.fps as f64).round() as usize
    }

    /// Left and right gains and delays at azimuth `x`.
    fn ear_params(&self, x: f64) -> ((f64, f64), (f64, f64)) {
        let gains = pan_gains(x);
        if !self.itd {
            return (gains, (0.0, 0.0));
        }
        let d = MAX_ITD_S * (1.0 - 2.0 * x).abs();
        let delays = if x < 0.5 { (0.0, d) } else { (d, 0.0) };
        (gains, delays)
    }

    pub fn render_audio(&self) -> Result<WaveformClip> {
        self.validate()?;
        let sr = self.sample_rate as f64;
        let n = self.num_samples();
        let mut left = Vec::with_capacity(n);
        let mut right = Vec::with_capacity(n);
        for i in 0..n {
            let t = i as f64 / sr;
            let ((gl, gr), (dl, dr)) = self.ear_params(self.azimuth_at(t));
            if dl == 0.0 && dr == 0.0 {
                let s = self.source.sample(t);
                left.push(gl * s);
                right.push(gr * s);
            } else {
                left.push(gl * self.source.sample(t - dl));
                right.push(gr * self.source.sample(t - dr));
            }
        }
        WaveformClip::stereo(left, right, self.sample_rate)
    }

    /// Frame `i` shows the source at its azimuth at time `i / fps`.
    pub fn render_frame(&self, index: usize) -> Image {
        let x = self.azimuth_at(index as f64 / self.fps as f64);
        blob_frame(x)
    }

    pub fn render(&self) -> Result<SyntheticClip> {
        let audio = self.render_audio()?;
        let frames = (0..self.num_frames()).map(|i| self.render_frame(i)).collect();
        Ok(SyntheticClip { audio, frames })
    }
}

/// Constant-power gains `(cos(xπ/2), sin(xπ/2))`. Each ear is evaluated
/// from its own side (`sin(xπ/2) = cos((1 − x)π/2)`), so `x = 0.5` gives
/// bitwise equal gains and the silent ear at `x = 0` or `1` is exactly zero.
pub fn pan_gains(x: f64) -> (f64, f64) {
    let ear = |u: f64| {
        if u <= 0.5 {
            (u * FRAC_PI_2).cos()
        } else {
            ((1.0 - u) * FRAC_PI_2).sin()
        }
    };
    (ear(x), ear(1.0 - x))
}

/// Dark frame with a bright square centred at `(x·480, 120)`, clipped at the borders.
pub fn blob_frame(x: f64) -> Image {
    let mut img = Image::filled(FRAME_WIDTH, FRAME_HEIGHT, [BACKGROUND; 3]);
    let cx = x * FRAME_WIDTH as f64;
    let cy = FRAME_HEIGHT as f64 / 2.0;
    let half = BLOB_SIZE as f64 / 2.0;
    let x0 = (cx - half).round().max(0.0) as usize;
    let x1 = ((cx + half).round().max(0.0) as usize).min(FRAME_WIDTH);
    let y0 = (cy - half).round() as usize;
    let y1 = (cy + half).round() as usize;
    for y in y0..y1 {
        for xx in x0..x1 {
            img.set_pixel(xx, y, [BLOB; 3]);
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::seeded_rng;

    fn spec(x: f64, itd: bool) -> SceneSpec {
        SceneSpec {
            azimuth: x,
            source: Source::tones(&mut seeded_rng(3), 3),
            motion: Motion::Static,
            duration_s: 0.2,
            sample_rate: 16000,
            fps: 10,
            itd,
        }
    }

    #[test]
    fn frame_geometry() {
        let img = blob_frame(0.5);
        assert_eq!((img.width(), img.height()), (480, 240));
        assert_eq!(img.pixel(240, 120), [BLOB; 3]);
        assert_eq!(img.pixel(220, 100), [BLOB; 3]);
        assert_eq!(img.pixel(219, 120), [BACKGROUND; 3]);
        assert_eq!(img.pixel(260, 120), [BACKGROUND; 3]);
        let left = blob_frame(0.0);
        assert_eq!(left.pixel(0, 120), [BLOB; 3]);
        assert_eq!(left.pixel(20, 120), [BACKGROUND; 3]);
    }

    #[test]
    fn drift_moves_linearly() {
        let mut s = spec(0.2, false);
        s.motion = Motion::Drift { end: 0.6 };
        s.duration_s = 2.0;
        assert!((s.azimuth_at(1.0) - 0.4).abs() < 1e-12);
        assert_eq!(s.azimuth_at(5.0), 0.6);
    }

    #[test]
    fn sources_respect_peak_bound() {
        let mut rng = seeded_rng(0);
        for _ in 0..20 {
            for src in [Source::tones(&mut rng, 4), Source::noise(&mut rng)] {
                let total: f64 = src.partials.iter().map(|p| p.amp).sum();
                assert!((total - PEAK).abs() < 1e-12);
                assert!(src.partials.iter().all(|p| (F_LO..=F_HI).contains(&p.freq)));
            }
        }
    }

    #[test]
    fn itd_delays_the_far_ear() {
        let s = spec(0.0, true);
        let clip = s.render_audio().unwrap();
        let (l, r) = clip.stereo_channels().unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
        let plain = spec(0.0, false).render_audio().unwrap();
        assert_eq!(l, plain.stereo_channels().unwrap().0);

        let s = spec(0.25, true);
        let clip = s.render_audio().unwrap();
        let (_, r) = clip.stereo_channels().unwrap();
        let d = MAX_ITD_S * 0.5;
        let gain = pan_gains(0.25).1;
        assert!((gain - (0.25 * FRAC_PI_2).sin()).abs() < 1e-15);
        for (i, &v) in r.iter().enumerate().take(50) {
            let t = i as f64 / 16000.0;
            assert!((v - gain * s.source.sample(t - d)).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_specs() {
        let mut s = spec(1.2, false);
        assert!(s.validate().is_err());
        s.azimuth = 0.5;
        s.motion = Motion::Drift { end: -0.1 };
        assert!(s.validate().is_err());
    }
}
