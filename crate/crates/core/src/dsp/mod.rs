//! Signal-processing kernels: waveform containers, STFT/ISTFT, channel algebra.

mod clip;
mod stft;
pub mod wav;

pub use clip::{Channel, WaveformClip};
pub use stft::{istft, stft, ComplexSpectrogram, Stft, StftConfig, WindowShape};

use crate::error::{Error, Result};

/// Default RMS level of the mono mixture after normalization.
pub const DEFAULT_TARGET_RMS: f64 = 0.1;

/// Mono mixture below this RMS is treated as silence.
pub const SILENCE_RMS: f64 = 1e-8;

/// Sums the two ear channels into a mono clip (`M = L + R`, not the average).
pub fn make_mono(clip: &WaveformClip) -> Result<WaveformClip> {
    let (l, r) = clip.stereo_channels()?;
    let m = l.iter().zip(r).map(|(a, b)| a + b).collect();
    WaveformClip::mono(m, clip.sample_rate())
}

/// Spectrogram of the difference signal `L − R`.
pub fn difference_spectrogram(clip: &WaveformClip, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    let (l, r) = clip.stereo_channels()?;
    let d: Vec<f64> = l.iter().zip(r).map(|(a, b)| a - b).collect();
    stft(&d, cfg)
}

/// Splits mono and difference spectrograms back into left/right ears.
pub fn recover_channels(
    mono: &ComplexSpectrogram,
    diff: &ComplexSpectrogram,
) -> Result<(ComplexSpectrogram, ComplexSpectrogram)> {
    mono.ensure_same_shape(diff, "recover_channels")?;
    let left = mono.zip_map(diff, |m, d| (m + d) * 0.5);
    let right = mono.zip_map(diff, |m, d| (m - d) * 0.5);
    Ok((left, right))
}

/// Same, in the waveform domain.
pub fn recover_waveforms(mono: &[f64], diff: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if mono.len() != diff.len() {
        return Err(Error::invalid(format!(
            "recover_waveforms: lengths {} and {}",
            mono.len(),
            diff.len()
        )));
    }
    let left = mono.iter().zip(diff).map(|(m, d)| 0.5 * (m + d)).collect();
    let right = mono.iter().zip(diff).map(|(m, d)| 0.5 * (m - d)).collect();
    Ok((left, right))
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Scales every channel so the mono mixture has RMS `target_rms`; returns the factor applied.
pub fn rms_normalize(clip: &WaveformClip, target_rms: f64) -> Result<(WaveformClip, f64)> {
    if !(target_rms.is_finite() && target_rms > 0.0) {
        return Err(Error::invalid(format!("target RMS {target_rms}")));
    }
    let level = rms(&clip.mono_mixture()?);
    if !(level > SILENCE_RMS) {
        return Err(Error::SilentInput { rms: level });
    }
    let scale = target_rms / level;
    Ok((clip.scaled(scale), scale))
}
