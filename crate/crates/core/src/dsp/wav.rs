//! 16-bit PCM WAV reading and writing.

use std::path::Path;

use crate::dsp::{Channel, WaveformClip};
use crate::error::{Error, Result};

const FULL_SCALE: f64 = 32768.0;

fn to_pcm(x: f64) -> i16 {
    (x * FULL_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

/// Reads a 1- or 2-channel 16-bit WAV. Two channels become L/R, one becomes M.
pub fn read_wav(path: &Path) -> Result<WaveformClip> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::invalid(format!(
            "{}: expected 16-bit PCM, found {:?} {}-bit",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / FULL_SCALE))
        .collect::<std::result::Result<Vec<f64>, _>>()?;
    match spec.channels {
        1 => WaveformClip::mono(samples, spec.sample_rate),
        2 => {
            let left = samples.iter().step_by(2).copied().collect();
            let right = samples.iter().skip(1).step_by(2).copied().collect();
            WaveformClip::stereo(left, right, spec.sample_rate)
        }
        n => Err(Error::invalid(format!(
            "{}: {n} channels, expected 1 or 2",
            path.display()
        ))),
    }
}

/// Writes L/R as a stereo file, or M alone as a mono file.
pub fn write_wav(path: &Path, clip: &WaveformClip) -> Result<()> {
    let channels: Vec<&[f64]> = match clip.stereo_channels() {
        Ok((l, r)) => vec![l, r],
        Err(_) => vec![clip
            .channel(Channel::Mono)
            .ok_or_else(|| Error::invalid("clip has neither stereo nor mono channels"))?],
    };
    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for t in 0..clip.len() {
        for ch in &channels {
            writer.write_sample(to_pcm(ch[t]))?;
        }
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stereo_round_trip_is_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let l: Vec<f64> = (0..400).map(|i| 0.5 * (i as f64 * 0.1).sin()).collect();
        let r: Vec<f64> = l.iter().map(|v| -0.25 * v).collect();
        let clip = WaveformClip::stereo(l.clone(), r, 16_000).unwrap();
        write_wav(&path, &clip).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate(), 16_000);
        assert_eq!(back.len(), 400);
        for (a, b) in back.channel(Channel::Left).unwrap().iter().zip(&l) {
            assert!((a - b).abs() <= 0.5 / FULL_SCALE + 1e-12);
        }
        // A second pass is lossless.
        write_wav(&path, &back).unwrap();
        assert_eq!(read_wav(&path).unwrap(), back);
    }

    #[test]
    fn full_scale_is_clamped() {
        assert_eq!(to_pcm(1.0), 32767);
        assert_eq!(to_pcm(-1.0), -32768);
        assert_eq!(to_pcm(-2.0), -32768);
        assert_eq!(to_pcm(0.5), 16384);
    }

    #[test]
    fn mono_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.wav");
        let clip = WaveformClip::mono(vec![0.0, 0.5, -0.5], 16_000).unwrap();
        write_wav(&path, &clip).unwrap();
        assert_eq!(read_wav(&path).unwrap(), clip);
    }
}
