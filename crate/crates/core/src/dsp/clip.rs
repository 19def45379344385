use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    Left,
    Right,
    Mono,
}

/// Sampled audio with any subset of {L, R, M}; all channels share one length.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformClip {
    sample_rate: u32,
    len: usize,
    left: Option<Vec<f64>>,
    right: Option<Vec<f64>>,
    mono: Option<Vec<f64>>,
}

impl WaveformClip {
    pub fn new(
        sample_rate: u32,
        left: Option<Vec<f64>>,
        right: Option<Vec<f64>>,
        mono: Option<Vec<f64>>,
    ) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate 0"));
        }
        let lens: Vec<usize> = [&left, &right, &mono]
            .iter()
            .filter_map(|c| c.as_ref().map(Vec::len))
            .collect();
        let Some(&len) = lens.first() else {
            return Err(Error::invalid("clip without channels"));
        };
        if lens.iter().any(|&l| l != len) {
            return Err(Error::invalid(format!("channel lengths differ: {lens:?}")));
        }
        Ok(Self {
            sample_rate,
            len,
            left,
            right,
            mono,
        })
    }

    pub fn stereo(left: Vec<f64>, right: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(sample_rate, Some(left), Some(right), None)
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(sample_rate, None, None, Some(samples))
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, c: Channel) -> Option<&[f64]> {
        match c {
            Channel::Left => self.left.as_deref(),
            Channel::Right => self.right.as_deref(),
            Channel::Mono => self.mono.as_deref(),
        }
    }

    pub fn has(&self, c: Channel) -> bool {
        self.channel(c).is_some()
    }

    /// Both ear channels, or an error naming the missing one.
    pub fn stereo_channels(&self) -> Result<(&[f64], &[f64])> {
        match (&self.left, &self.right) {
            (Some(l), Some(r)) => Ok((l, r)),
            (None, _) => Err(Error::invalid("clip has no left channel")),
            (_, None) => Err(Error::invalid("clip has no right channel")),
        }
    }

    /// The mono mixture: the M channel if present, else `L + R`.
    pub fn mono_mixture(&self) -> Result<Vec<f64>> {
        if let Some(m) = &self.mono {
            return Ok(m.clone());
        }
        let (l, r) = self.stereo_channels()?;
        Ok(l.iter().zip(r).map(|(a, b)| a + b).collect())
    }

    pub fn scaled(&self, k: f64) -> Self {
        let s = |c: &Option<Vec<f64>>| c.as_ref().map(|v| v.iter().map(|x| x * k).collect());
        Self {
            sample_rate: self.sample_rate,
            len: self.len,
            left: s(&self.left),
            right: s(&self.right),
            mono: s(&self.mono),
        }
    }

    /// Samples `[start, start + len)` of every channel.
    pub fn segment(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len {
            return Err(Error::invalid(format!(
                "segment {start}+{len} exceeds clip length {}",
                self.len
            )));
        }
        let s = |c: &Option<Vec<f64>>| c.as_ref().map(|v| v[start..start + len].to_vec());
        Ok(Self {
            sample_rate: self.sample_rate,
            len,
            left: s(&self.left),
            right: s(&self.right),
            mono: s(&self.mono),
        })
    }
}
