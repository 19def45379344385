//! Objective distances between predicted and reference binaural audio.
//!
//! Spectral metrics take stereo spectrogram pairs, waveform metrics take
//! stereo clips. [`evaluate_clip`] computes all six from waveforms.

mod report;

pub use report::{compensated_mean, compensated_sum, Aggregate, ClipMetrics, MetricReport};

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp::{recover_channels, stft, ComplexSpectrogram, StftConfig, WaveformClip};
use crate::error::{Error, Result};

/// Left and right spectrograms of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoSpectrogram {
    pub left: ComplexSpectrogram,
    pub right: ComplexSpectrogram,
}

impl StereoSpectrogram {
    pub fn new(left: ComplexSpectrogram, right: ComplexSpectrogram) -> Result<Self> {
        left.ensure_same_shape(&right, "stereo spectrogram")?;
        Ok(Self { left, right })
    }

    pub fn from_clip(clip: &WaveformClip, cfg: &StftConfig) -> Result<Self> {
        let (l, r) = clip.stereo_channels()?;
        Self::new(stft(l, cfg)?, stft(r, cfg)?)
    }

    pub fn frames(&self) -> usize {
        self.left.frames()
    }

    /// `L − R`.
    pub fn difference(&self) -> ComplexSpectrogram {
        self.left.zip_map(&self.right, |l, r| l - r)
    }

    fn check(&self, other: &Self, what: &str) -> Result<()> {
        self.left.ensure_same_shape(&other.left, what)?;
        self.right.ensure_same_shape(&other.right, what)
    }
}

fn grid_distance(a: &ComplexSpectrogram, b: &ComplexSpectrogram, f: impl Fn(Complex64, Complex64) -> f64) -> f64 {
    a.bins()
        .iter()
        .zip(b.bins())
        .map(|(&x, &y)| {
            let d = f(x, y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// `(‖L̂ − L‖ + ‖R̂ − R‖) / T_s` over complex bins.
pub fn stft_distance(pred: &StereoSpectrogram, gt: &StereoSpectrogram) -> Result<f64> {
    pred.check(gt, "stft_distance")?;
    let d = |a, b| grid_distance(a, b, |x, y| (x - y).norm());
    Ok((d(&pred.left, &gt.left) + d(&pred.right, &gt.right)) / gt.frames() as f64)
}

/// As [`stft_distance`] on magnitudes only.
pub fn mag_distance(pred: &StereoSpectrogram, gt: &StereoSpectrogram) -> Result<f64> {
    pred.check(gt, "mag_distance")?;
    let d = |a, b| grid_distance(a, b, |x, y| x.norm() - y.norm());
    Ok((d(&pred.left, &gt.left) + d(&pred.right, &gt.right)) / gt.frames() as f64)
}

/// Principal-value phase difference `arg(a) − arg(b)` in `[−π, π]`.
pub fn wrapped_phase_difference(a: Complex64, b: Complex64) -> f64 {
    (a * b.conj()).arg()
}

/// Mean absolute wrapped phase difference between the `L − R` spectrograms.
pub fn phs_distance(pred: &StereoSpectrogram, gt: &StereoSpectrogram) -> Result<f64> {
    pred.check(gt, "phs_distance")?;
    let (dp, dg) = (pred.difference(), gt.difference());
    let total: f64 = dp
        .bins()
        .iter()
        .zip(dg.bins())
        .map(|(&p, &g)| wrapped_phase_difference(p, g).abs())
        .sum();
    Ok(total / dp.len() as f64)
}

/// Amplitude envelope `|x + i·H{x}|` via a full-length FFT.
pub fn envelope(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    // Analytic-signal spectrum: keep DC (and Nyquist for even n), double positive, zero negative.
    let half = n / 2;
    for (k, v) in buf.iter_mut().enumerate() {
        let keep = k == 0 || (n % 2 == 0 && k == half);
        if keep {
            continue;
        }
        if k < n.div_ceil(2) {
            *v *= 2.0;
        } else {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.norm() / n as f64).collect()
}

fn same_stereo_length<'a>(
    pred: &'a WaveformClip,
    gt: &'a WaveformClip,
    what: &str,
) -> Result<[(&'a [f64], &'a [f64]); 2]> {
    let (pl, pr) = pred.stereo_channels()?;
    let (gl, gr) = gt.stereo_channels()?;
    if pl.len() != gl.len() {
        return Err(Error::invalid(format!(
            "{what}: lengths {} and {}",
            pl.len(),
            gl.len()
        )));
    }
    if gl.is_empty() {
        return Err(Error::invalid(format!("{what}: empty clips")));
    }
    Ok([(pl, gl), (pr, gr)])
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Per-channel Euclidean envelope distance, summed over channels, divided by `T'`.
pub fn env_distance(pred: &WaveformClip, gt: &WaveformClip) -> Result<f64> {
    let pairs = same_stereo_length(pred, gt, "env_distance")?;
    let total: f64 = pairs
        .iter()
        .map(|(p, g)| euclid(&envelope(p), &envelope(g)))
        .sum();
    Ok(total / gt.len() as f64)
}

/// `10³ · ‖ŵ − w‖ / T'` over both channels jointly.
pub fn wav_distance(pred: &WaveformClip, gt: &WaveformClip) -> Result<f64> {
    let pairs = same_stereo_length(pred, gt, "wav_distance")?;
    let sq: f64 = pairs
        .iter()
        .map(|(p, g)| p.iter().zip(*g).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .sum();
    Ok(1e3 * sq.sqrt() / gt.len() as f64)
}

/// `10·log10(Σ gt² / Σ (gt − pred)²)`; `+∞` for a perfect prediction.
pub fn snr(pred: &WaveformClip, gt: &WaveformClip) -> Result<f64> {
    let pairs = same_stereo_length(pred, gt, "snr")?;
    let (mut signal, mut noise) = (0.0, 0.0);
    for (p, g) in pairs {
        for (x, y) in p.iter().zip(g) {
            signal += y * y;
            noise += (y - x) * (y - x);
        }
    }
    if signal <= 0.0 {
        return Err(Error::invalid("snr: reference clip is silent"));
    }
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}

/// The trivial predictor: zero difference, so both ears get half the mono mixture.
pub fn mono_mono_baseline(mono: &ComplexSpectrogram) -> StereoSpectrogram {
    let zero = ComplexSpectrogram::zeros(mono.freq_bins(), mono.frames(), *mono.config());
    let (left, right) = recover_channels(mono, &zero).expect("same shape by construction");
    StereoSpectrogram { left, right }
}

/// All six metrics for one clip, spectral ones recomputed from the waveforms.
pub fn evaluate_clip(
    clip_id: &str,
    pred: &WaveformClip,
    gt: &WaveformClip,
    cfg: &StftConfig,
) -> Result<ClipMetrics> {
    let ps = StereoSpectrogram::from_clip(pred, cfg)?;
    let gs = StereoSpectrogram::from_clip(gt, cfg)?;
    Ok(ClipMetrics {
        clip_id: clip_id.to_string(),
        stft_d: stft_distance(&ps, &gs)?,
        env_d: env_distance(pred, gt)?,
        mag_d: mag_distance(&ps, &gs)?,
        phs_d: phs_distance(&ps, &gs)?,
        wav_d: wav_distance(pred, gt)?,
        snr_db: snr(pred, gt)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn grid(seed: u64, f: usize, t: usize) -> ComplexSpectrogram {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let bins = (0..f * t)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        ComplexSpectrogram::from_bins(f, t, bins, StftConfig::default()).unwrap()
    }

    fn stereo(seed: u64, f: usize, t: usize) -> StereoSpectrogram {
        StereoSpectrogram::new(grid(seed, f, t), grid(seed + 1000, f, t)).unwrap()
    }

    fn clip(seed: u64, n: usize) -> WaveformClip {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let l = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let r = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        WaveformClip::stereo(l, r, 16_000).unwrap()
    }

    /// Double loop over (channel, frequency, frame) written independently of the library.
    fn stft_oracle(p: &StereoSpectrogram, g: &StereoSpectrogram, mag: bool) -> f64 {
        let mut total = 0.0;
        for (a, b) in [(&p.left, &g.left), (&p.right, &g.right)] {
            let mut sq = 0.0;
            for f in 0..a.freq_bins() {
                for t in 0..a.frames() {
                    let (x, y) = (a.get(f, t), b.get(f, t));
                    let d = if mag {
                        (x.re.hypot(x.im) - y.re.hypot(y.im)).powi(2)
                    } else {
                        (x.re - y.re).powi(2) + (x.im - y.im).powi(2)
                    };
                    sq += d;
                }
            }
            total += sq.sqrt();
        }
        total / p.left.frames() as f64
    }

    #[test]
    fn stft_distance_cases() {
        let a = stereo(1, 5, 4);
        assert_eq!(stft_distance(&a, &a).unwrap(), 0.0);

        let cfg = StftConfig::default();
        let zero = StereoSpectrogram::new(
            ComplexSpectrogram::zeros(3, 1, cfg),
            ComplexSpectrogram::zeros(3, 1, cfg),
        )
        .unwrap();
        let mut one = zero.clone();
        one.left.set(1, 0, Complex64::new(3.0, 4.0));
        assert!((stft_distance(&one, &zero).unwrap() - 5.0).abs() < 1e-15);

        let b = stereo(2, 5, 4);
        assert!((stft_distance(&a, &b).unwrap() - stft_oracle(&a, &b, false)).abs() < 1e-9);
        assert!(stft_distance(&a, &stereo(3, 5, 3)).is_err());
    }

    #[test]
    fn mag_distance_cases() {
        let a = stereo(4, 6, 5);
        assert_eq!(mag_distance(&a, &a).unwrap(), 0.0);
        let rotated = StereoSpectrogram {
            left: a.left.map(|z| z * Complex64::i()),
            right: a.right.map(|z| z * Complex64::i()),
        };
        assert!(mag_distance(&rotated, &a).unwrap() < 1e-15);
        let b = stereo(5, 6, 5);
        assert!((mag_distance(&a, &b).unwrap() - stft_oracle(&a, &b, true)).abs() < 1e-9);
    }

    #[test]
    fn phs_distance_cases() {
        let a = stereo(6, 7, 3);
        assert_eq!(phs_distance(&a, &a).unwrap(), 0.0);
        let rot = |k: f64| StereoSpectrogram {
            left: a.left.map(|z| z * Complex64::from_polar(1.0, k)),
            right: a.right.map(|z| z * Complex64::from_polar(1.0, k)),
        };
        assert!((phs_distance(&rot(PI), &a).unwrap() - PI).abs() < 1e-9);
        assert!((phs_distance(&rot(1.5 * PI), &a).unwrap() - PI / 2.0).abs() < 1e-9);
        assert!((phs_distance(&rot(0.3), &a).unwrap() - 0.3).abs() < 1e-9);
    }

    #[test]
    fn envelope_of_a_sine_is_its_amplitude() {
        // Whole number of periods keeps the FFT-based Hilbert transform exact.
        let n = 1600;
        let x: Vec<f64> = (0..n).map(|i| 0.7 * (2.0 * PI * 25.0 * i as f64 / n as f64).sin()).collect();
        for e in envelope(&x) {
            assert!((e - 0.7).abs() < 1e-9);
        }
    }

    #[test]
    fn env_distance_cases() {
        let n = 1600;
        let sine: Vec<f64> = (0..n).map(|i| (2.0 * PI * 40.0 * i as f64 / n as f64).sin()).collect();
        let cosine: Vec<f64> = (0..n).map(|i| (2.0 * PI * 40.0 * i as f64 / n as f64).cos()).collect();
        let gt = WaveformClip::stereo(sine.clone(), sine.clone(), 16_000).unwrap();
        assert_eq!(env_distance(&gt, &gt).unwrap(), 0.0);
        let silent = WaveformClip::stereo(vec![0.0; n], vec![0.0; n], 16_000).unwrap();
        let expect = 2.0 * (n as f64).sqrt() / n as f64;
        assert!((env_distance(&silent, &gt).unwrap() - expect).abs() < 1e-9);
        let shifted = WaveformClip::stereo(cosine.clone(), cosine, 16_000).unwrap();
        assert!(env_distance(&shifted, &gt).unwrap() < 1e-3);
        let short = WaveformClip::stereo(vec![0.0; 10], vec![0.0; 10], 16_000).unwrap();
        assert!(env_distance(&short, &gt).is_err());
    }

    #[test]
    fn wav_distance_cases() {
        let gt = WaveformClip::stereo(vec![0.0; 4], vec![0.0; 4], 16_000).unwrap();
        let ones = WaveformClip::stereo(vec![1.0; 4], vec![1.0; 4], 16_000).unwrap();
        assert_eq!(wav_distance(&gt, &gt).unwrap(), 0.0);
        assert!((wav_distance(&ones, &gt).unwrap() - 1e3 * 8f64.sqrt() / 4.0).abs() < 1e-12);
        let (a, b) = (clip(1, 100), clip(2, 100));
        let (al, ar) = a.stereo_channels().unwrap();
        let (bl, br) = b.stereo_channels().unwrap();
        let mut sq = 0.0;
        for i in 0..100 {
            sq += (al[i] - bl[i]).powi(2) + (ar[i] - br[i]).powi(2);
        }
        assert!((wav_distance(&a, &b).unwrap() - 1e3 * sq.sqrt() / 100.0).abs() < 1e-9);
    }

    #[test]
    fn snr_cases() {
        let gt = clip(3, 500);
        assert_eq!(snr(&gt, &gt).unwrap(), f64::INFINITY);
        let half = gt.scaled(0.5);
        assert!((snr(&half, &gt).unwrap() - 10.0 * 4f64.log10()).abs() < 1e-9);
        let zero = gt.scaled(0.0);
        assert!(snr(&zero, &gt).unwrap().abs() < 1e-12);
        let other = clip(4, 500);
        let (gl, gr) = gt.stereo_channels().unwrap();
        let (ol, or) = other.stereo_channels().unwrap();
        let (mut s, mut e) = (0.0, 0.0);
        for i in 0..500 {
            s += gl[i] * gl[i] + gr[i] * gr[i];
            e += (gl[i] - ol[i]).powi(2) + (gr[i] - or[i]).powi(2);
        }
        assert!((snr(&other, &gt).unwrap() - 10.0 * (s / e).log10()).abs() < 1e-6);
        assert!(snr(&gt, &zero).is_err());
    }

    #[test]
    fn baseline_is_half_mono_each_side() {
        let m = grid(8, 4, 3);
        let b = mono_mono_baseline(&m);
        for (l, z) in b.left.bins().iter().zip(m.bins()) {
            assert_eq!(*l, z * 0.5);
        }
        assert_eq!(b.left, b.right);

        // A source identical in both ears is predicted perfectly.
        let s: Vec<f64> = (0..3200).map(|i| (i as f64 * 0.07).sin() * 0.3).collect();
        let gt = WaveformClip::stereo(s.clone(), s.clone(), 16_000).unwrap();
        let cfg = StftConfig::default();
        let mono = stft(&gt.mono_mixture().unwrap(), &cfg).unwrap();
        let pred = mono_mono_baseline(&mono);
        let gs = StereoSpectrogram::from_clip(&gt, &cfg).unwrap();
        assert!(stft_distance(&pred, &gs).unwrap() < 1e-9);
        assert!(mag_distance(&pred, &gs).unwrap() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn distances_are_symmetric_and_ordered(seed in any::<u64>()) {
            let a = stereo(seed, 6, 4);
            let b = stereo(seed.wrapping_add(1), 6, 4);
            let s = stft_distance(&a, &b).unwrap();
            let m = mag_distance(&a, &b).unwrap();
            prop_assert!((s - stft_distance(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((m - mag_distance(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((phs_distance(&a, &b).unwrap() - phs_distance(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!(m <= s + 1e-12);
            prop_assert!(s >= 0.0 && m >= 0.0);
        }

        #[test]
        fn waveform_metrics_are_symmetric(seed in any::<u64>()) {
            let a = clip(seed, 256);
            let b = clip(seed.wrapping_add(7), 256);
            prop_assert!((wav_distance(&a, &b).unwrap() - wav_distance(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((env_distance(&a, &b).unwrap() - env_distance(&b, &a).unwrap()).abs() < 1e-12);
        }
    }
}
