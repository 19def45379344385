//! Conversions between signal-domain values and network tensors.

use rustfft::num_complex::Complex64;

use crate::dsp::{ComplexSpectrogram, StftConfig};
use crate::error::{Error, Result};

/// Crops a spectrogram to its lowest `freq_bins` bins and lays it out as
/// `[2, freq_bins, frames]` (real plane, then imaginary plane).
pub fn spectrogram_planes(spec: &ComplexSpectrogram, freq_bins: usize) -> Result<Vec<f64>> {
    if freq_bins > spec.freq_bins() {
        return Err(Error::invalid(format!(
            "cannot crop {} bins to {freq_bins}",
            spec.freq_bins()
        )));
    }
    let t = spec.frames();
    let mut out = vec![0.0; 2 * freq_bins * t];
    let (re, im) = out.split_at_mut(freq_bins * t);
    for f in 0..freq_bins {
        for k in 0..t {
            let z = spec.get(f, k);
            re[f * t + k] = z.re;
            im[f * t + k] = z.im;
        }
    }
    Ok(out)
}

/// Rebuilds a full-height spectrogram from cropped real/imaginary planes;
/// bins above the crop (the Nyquist bin) are zero.
pub fn planes_to_spectrogram(
    re: &[f64],
    im: &[f64],
    freq_bins: usize,
    frames: usize,
    cfg: &StftConfig,
) -> Result<ComplexSpectrogram> {
    if re.len() != freq_bins * frames || im.len() != re.len() || freq_bins > cfg.freq_bins() {
        return Err(Error::invalid(format!(
            "planes of {}/{} values for a {freq_bins}x{frames} crop",
            re.len(),
            im.len()
        )));
    }
    let mut spec = ComplexSpectrogram::zeros(cfg.freq_bins(), frames, *cfg);
    for f in 0..freq_bins {
        for k in 0..frames {
            spec.set(f, k, Complex64::new(re[f * frames + k], im[f * frames + k]));
        }
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_and_restore() {
        let cfg = StftConfig::default();
        let mut spec = ComplexSpectrogram::zeros(257, 3, cfg);
        for f in 0..257 {
            for t in 0..3 {
                spec.set(f, t, Complex64::new(f as f64, -(t as f64)));
            }
        }
        let planes = spectrogram_planes(&spec, 256).unwrap();
        assert_eq!(planes.len(), 2 * 256 * 3);
        let (re, im) = planes.split_at(256 * 3);
        let back = planes_to_spectrogram(re, im, 256, 3, &cfg).unwrap();
        for t in 0..3 {
            assert_eq!(back.get(256, t), Complex64::new(0.0, 0.0));
            for f in 0..256 {
                assert_eq!(back.get(f, t), spec.get(f, t));
            }
        }
    }
}
