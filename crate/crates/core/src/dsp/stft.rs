//! Short-time Fourier analysis and least-squares overlap-add synthesis.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowShape {
    Hann,
}

/// Analysis parameters; the defaults are 25 ms Hann / 10 ms hop / 512-point FFT at 16 kHz.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub window_ms: u32,
    pub hop_ms: u32,
    pub fft_size: usize,
    pub window_shape: WindowShape,
    /// Reflect-pad `fft_size / 2` samples at both ends so frame `k` is centred on sample `k·hop`.
    pub center_pad: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            window_ms: 25,
            hop_ms: 10,
            fft_size: 512,
            window_shape: WindowShape::Hann,
            center_pad: true,
        }
    }
}

impl StftConfig {
    pub fn window_len(&self) -> usize {
        self.sample_rate as usize * self.window_ms as usize / 1000
    }

    pub fn hop(&self) -> usize {
        self.sample_rate as usize * self.hop_ms as usize / 1000
    }

    pub fn freq_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn frames_for(&self, len: usize) -> usize {
        if self.center_pad {
            len / self.hop() + 1
        } else if len < self.fft_size {
            0
        } else {
            (len - self.fft_size) / self.hop() + 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.window_len(), self.hop());
        if w == 0 || h == 0 || w > self.fft_size || self.fft_size % 2 != 0 {
            return Err(Error::invalid(format!(
                "stft config: window {w}, hop {h}, fft {} (need 0 < window <= fft, even fft)",
                self.fft_size
            )));
        }
        Ok(())
    }

    /// Analysis window zero-padded (centred) to `fft_size`.
    pub fn padded_window(&self) -> Vec<f64> {
        let n = self.window_len();
        let offset = (self.fft_size - n) / 2;
        let mut out = vec![0.0; self.fft_size];
        for (i, w) in out[offset..offset + n].iter_mut().enumerate() {
            // periodic Hann
            *w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos();
        }
        out
    }
}

/// Complex time-frequency grid stored frequency-major: `bins[f * frames + t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    freq_bins: usize,
    frames: usize,
    bins: Vec<Complex64>,
    config: StftConfig,
}

impl ComplexSpectrogram {
    pub fn zeros(freq_bins: usize, frames: usize, config: StftConfig) -> Self {
        Self {
            freq_bins,
            frames,
            bins: vec![Complex64::new(0.0, 0.0); freq_bins * frames],
            config,
        }
    }

    pub fn from_bins(
        freq_bins: usize,
        frames: usize,
        bins: Vec<Complex64>,
        config: StftConfig,
    ) -> Result<Self> {
        if bins.len() != freq_bins * frames {
            return Err(Error::invalid(format!(
                "{} bins for a {freq_bins}x{frames} grid",
                bins.len()
            )));
        }
        Ok(Self {
            freq_bins,
            frames,
            bins,
            config,
        })
    }

    pub fn freq_bins(&self) -> usize {
        self.freq_bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// `F × T_s`, the element count used to normalize losses.
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    pub fn bins_mut(&mut self) -> &mut [Complex64] {
        &mut self.bins
    }

    pub fn get(&self, f: usize, t: usize) -> Complex64 {
        self.bins[f * self.frames + t]
    }

    pub fn set(&mut self, f: usize, t: usize, v: Complex64) {
        self.bins[f * self.frames + t] = v;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.freq_bins == other.freq_bins && self.frames == other.frames
    }

    pub fn ensure_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::invalid(format!(
                "{what}: shape {}x{} vs {}x{}",
                self.freq_bins, self.frames, other.freq_bins, other.frames
            )));
        }
        Ok(())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Self {
        Self {
            freq_bins: self.freq_bins,
            frames: self.frames,
            bins: self.bins.iter().zip(&other.bins).map(|(&a, &b)| f(a, b)).collect(),
            config: self.config,
        }
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            freq_bins: self.freq_bins,
            frames: self.frames,
            bins: self.bins.iter().map(|&a| f(a)).collect(),
            config: self.config,
        }
    }
}

/// Planned forward/inverse transforms for one [`StftConfig`].
#[derive(Clone)]
pub struct Stft {
    config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("config", &self.config).finish()
    }
}

/// Index into a signal of length `n` under reflect padding (edge sample not repeated).
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            window: config.padded_window(),
            forward: planner.plan_fft_forward(config.fft_size),
            inverse: planner.plan_fft_inverse(config.fft_size),
            config,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn forward(&self, signal: &[f64]) -> Result<ComplexSpectrogram> {
        if signal.is_empty() {
            return Err(Error::invalid("stft of an empty signal"));
        }
        let cfg = &self.config;
        let (n_fft, hop) = (cfg.fft_size, cfg.hop());
        let pad = if cfg.center_pad { n_fft / 2 } else { 0 };
        let frames = cfg.frames_for(signal.len());
        if frames == 0 {
            return Err(Error::invalid(format!(
                "signal of {} samples is shorter than one frame",
                signal.len()
            )));
        }
        let bins_per_frame = cfg.freq_bins();
        let mut out = ComplexSpectrogram::zeros(bins_per_frame, frames, *cfg);
        let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
        for t in 0..frames {
            let start = (t * hop) as isize - pad as isize;
            for (j, (b, &w)) in buf.iter_mut().zip(&self.window).enumerate() {
                let idx = start + j as isize;
                let x = if idx >= 0 && (idx as usize) < signal.len() {
                    signal[idx as usize]
                } else if cfg.center_pad {
                    signal[reflect_index(idx, signal.len())]
                } else {
                    0.0
                };
                *b = Complex64::new(x * w, 0.0);
            }
            self.forward.process(&mut buf);
            for (f, &v) in buf[..bins_per_frame].iter().enumerate() {
                out.set(f, t, v);
            }
        }
        Ok(out)
    }

    /// Least-squares inverse: windowed overlap-add divided by the summed squared window.
    pub fn inverse(&self, spec: &ComplexSpectrogram, out_len: usize) -> Result<Vec<f64>> {
        let cfg = &self.config;
        let (n_fft, hop) = (cfg.fft_size, cfg.hop());
        if spec.freq_bins() != cfg.freq_bins() {
            return Err(Error::invalid(format!(
                "istft: {} bins, config expects {}",
                spec.freq_bins(),
                cfg.freq_bins()
            )));
        }
        let frames = spec.frames();
        let pad = if cfg.center_pad { n_fft / 2 } else { 0 };
        let total = if frames == 0 { 0 } else { (frames - 1) * hop + n_fft };
        let mut acc = vec![0.0; total];
        let mut wsum = vec![0.0; total];
        let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
        let half = cfg.freq_bins();
        let scale = 1.0 / n_fft as f64;
        for t in 0..frames {
            for f in 0..half {
                buf[f] = spec.get(f, t);
            }
            for f in half..n_fft {
                buf[f] = spec.get(n_fft - f, t).conj();
            }
            self.inverse.process(&mut buf);
            let base = t * hop;
            for (j, (&v, &w)) in buf.iter().zip(&self.window).enumerate() {
                acc[base + j] += v.re * scale * w;
                wsum[base + j] += w * w;
            }
        }
        let mut out = vec![0.0; out_len];
        for (i, o) in out.iter_mut().enumerate() {
            let j = i + pad;
            if j < total && wsum[j] >= 1e-8 {
                *o = acc[j] / wsum[j];
            }
        }
        Ok(out)
    }
}

pub fn stft(signal: &[f64], cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    Stft::new(*cfg)?.forward(signal)
}

pub fn istft(spec: &ComplexSpectrogram, cfg: &StftConfig, out_len: usize) -> Result<Vec<f64>> {
    Stft::new(*cfg)?.inverse(spec, out_len)
}
