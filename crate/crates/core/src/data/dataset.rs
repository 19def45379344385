//! Writes a synthetic dataset: WAV files, frame directories and a manifest.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::RngStreams;
use crate::data::manifest::{frame_file_name, ClipRecord, Manifest, Split};
use crate::data::synth::{Motion, SceneSpec, Source};
use crate::dsp::wav::write_wav;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SCENES_FILE: &str = "scenes.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub clips: usize,
    pub seed: u64,
    pub duration_s: f64,
    pub fps: u32,
    pub sample_rate: u32,
    /// Train/val/test proportions; val and test counts are floored, train takes the rest.
    pub split: [f64; 3],
    /// Add interaural time differences on top of level differences.
    pub itd: bool,
    /// Share of clips whose source drifts.
    pub drift_fraction: f64,
    /// Largest azimuth change over a drifting clip.
    pub max_drift: f64,
    /// Share of clips using band-limited noise instead of tones.
    pub noise_fraction: f64,
    /// Tone count range for tonal sources (inclusive).
    pub tones: (usize, usize),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            clips: 64,
            seed: 7,
            duration_s: 10.0,
            fps: 10,
            sample_rate: 16000,
            split: [0.8, 0.1, 0.1],
            itd: false,
            drift_fraction: 0.25,
            max_drift: 0.2,
            noise_fraction: 0.5,
            tones: (1, 4),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.clips == 0 {
            problems.push("clips must be positive".to_string());
        }
        if self.split.iter().any(|&s| !(0.0..=1.0).contains(&s)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            problems.push(format!("split {:?} must be proportions summing to 1", self.split));
        }
        for (name, v) in [
            ("drift_fraction", self.drift_fraction),
            ("noise_fraction", self.noise_fraction),
            ("max_drift", self.max_drift),
        ] {
            if !(0.0..=1.0).contains(&v) {
                problems.push(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.tones.0 == 0 || self.tones.0 > self.tones.1 {
            problems.push(format!("tone range {:?} is empty", self.tones));
        }
        if !(self.duration_s > 0.0) || self.fps == 0 || self.sample_rate == 0 {
            problems.push("duration, fps and sample_rate must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// `(train, val, test)` clip counts.
    pub fn split_counts(&self) -> (usize, usize, usize) {
        let val = (self.clips as f64 * self.split[1]).floor() as usize;
        let test = (self.clips as f64 * self.split[2]).floor() as usize;
        (self.clips - val - test, val, test)
    }

    pub fn split_of(&self, index: usize) -> Split {
        let (train, val, _) = self.split_counts();
        if index < train {
            Split::Train
        } else if index < train + val {
            Split::Val
        } else {
            Split::Test
        }
    }

    /// Scene for every clip. Azimuths are stratified: clip `i` falls in
    /// stratum `perm[i]` of `clips` equal bins, so every bin is used once.
    pub fn scenes(&self) -> Result<Vec<SceneSpec>> {
        self.validate()?;
        let streams = RngStreams::new(self.seed);
        let mut strata: Vec<usize> = (0..self.clips).collect();
        strata.shuffle(&mut streams.stream("azimuth"));
        let n = self.clips as f64;
        strata
            .iter()
            .enumerate()
            .map(|(i, &stratum)| {
                let mut rng = streams.stream_at("scene", i as u64);
                let azimuth = (stratum as f64 + rng.gen::<f64>()) / n;
                let source = if rng.gen::<f64>() < self.noise_fraction {
                    Source::noise(&mut rng)
                } else {
                    let k = rng.gen_range(self.tones.0..=self.tones.1);
                    Source::tones(&mut rng, k)
                };
                let motion = if rng.gen::<f64>() < self.drift_fraction {
                    let delta = rng.gen_range(-self.max_drift..=self.max_drift);
                    Motion::Drift {
                        end: (azimuth + delta).clamp(0.0, 1.0),
                    }
                } else {
                    Motion::Static
                };
                let spec = SceneSpec {
                    azimuth,
                    source,
                    motion,
                    duration_s: self.duration_s,
                    sample_rate: self.sample_rate,
                    fps: self.fps,
                    itd: self.itd,
                };
                spec.validate()?;
                Ok(spec)
            })
            .collect()
    }
}

pub fn clip_id(index: usize) -> String {
    format!("clip_{index:04}")
}

/// Renders every scene under `root` and writes `manifest.jsonl` (and the
/// scene descriptions in `scenes.jsonl`). A non-empty `root` is refused
/// unless `force` is set, in which case it is cleared first.
pub fn write_synthetic_dataset(root: &Path, cfg: &SynthConfig, force: bool) -> Result<Manifest> {
    let scenes = cfg.scenes()?;
    prepare_dir(root, force)?;
    let mut records = Vec::with_capacity(scenes.len());
    let mut scene_lines = String::new();
    for (i, scene) in scenes.iter().enumerate() {
        let id = clip_id(i);
        let audio_rel = PathBuf::from("audio").join(format!("{id}.wav"));
        let frames_rel = PathBuf::from("frames").join(&id);
        let clip = scene.render()?;
        let audio_path = root.join(&audio_rel);
        let frames_dir = root.join(&frames_rel);
        for dir in [audio_path.parent().expect("audio dir"), frames_dir.as_path()] {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_wav(&audio_path, &clip.audio)?;
        for (k, frame) in clip.frames.iter().enumerate() {
            frame.write_png(&frames_dir.join(frame_file_name(k)))?;
        }
        records.push(ClipRecord {
            clip_id: id.clone(),
            audio_path: audio_rel,
            frames_dir: frames_rel,
            fps: cfg.fps,
            duration_s: cfg.duration_s,
            split: cfg.split_of(i),
        });
        let line = serde_json::json!({ "clip_id": id, "scene": scene });
        scene_lines.push_str(&line.to_string());
        scene_lines.push('\n');
        log::debug!("wrote {id} (azimuth {:.3})", scene.azimuth);
    }
    let manifest = Manifest {
        root: root.to_path_buf(),
        records,
    };
    manifest.write(&root.join(MANIFEST_FILE))?;
    let scenes_path = root.join(SCENES_FILE);
    fs::write(&scenes_path, scene_lines).map_err(|e| Error::io(&scenes_path, e))?;
    Ok(manifest)
}

fn prepare_dir(root: &Path, force: bool) -> Result<()> {
    if root.exists() {
        let mut entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
        if entries.next().is_some() {
            if !force {
                return Err(Error::invalid(format!(
                    "output directory {} is not empty (use --force to overwrite)",
                    root.display()
                )));
            }
            fs::remove_dir_all(root).map_err(|e| Error::io(root, e))?;
        }
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))
}
