//! JSON-lines clip manifests.
//!
//! One object per line:
//! `{"clip_id": "...", "audio_path": "...", "frames_dir": "...", "fps": 10, "duration_s": 10.0, "split": "train"}`.
//! Relative paths resolve against the manifest's directory. Frames are PNG
//! files named by zero-padded index (`000042.png`).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::image::Image;
use crate::dsp::wav::read_wav;
use crate::dsp::WaveformClip;
use crate::error::{Error, Result};

pub const DEFAULT_FPS: u32 = 10;
pub const DEFAULT_DURATION_S: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

fn default_fps() -> u32 {
    DEFAULT_FPS
}

fn default_duration() -> f64 {
    DEFAULT_DURATION_S
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipRecord {
    pub clip_id: String,
    pub audio_path: PathBuf,
    pub frames_dir: PathBuf,
    #[serde(default = "default_fps")]
    pub fps: u32,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    pub split: Split,
}

impl ClipRecord {
    pub fn expected_frames(&self) -> usize {
        (self.fps as f64 * self.duration_s).round() as usize
    }
}

/// File name of frame `index`.
pub fn frame_file_name(index: usize) -> String {
    format!("{index:06}.png")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    /// Directory that relative paths resolve against.
    pub root: PathBuf,
    pub records: Vec<ClipRecord>,
}

impl Manifest {
    /// Parses JSON lines without touching the file system. Blank lines are skipped.
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ClipRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        Ok(Self {
            root: root.into(),
            records,
        })
    }

    /// Reads, parses and validates a manifest file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest = Self::parse(&text, root)?;
        if manifest.records.is_empty() {
            log::warn!("manifest {} lists no clips", path.display());
        }
        manifest.validate()?;
        Ok(manifest)
    }

    /// Checks that every referenced file exists and frame counts match
    /// `fps × duration` within one frame; reports every offender at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for r in &self.records {
            if !seen.insert(&r.clip_id) {
                problems.push(format!("{}: duplicate clip_id", r.clip_id));
            }
            if r.fps == 0 || !(r.duration_s > 0.0) {
                problems.push(format!("{}: fps and duration must be positive", r.clip_id));
            }
            let audio = self.audio_path(r);
            if !audio.is_file() {
                problems.push(format!("{}: missing audio {}", r.clip_id, audio.display()));
            }
            match self.frame_count(r) {
                Ok(n) => {
                    let expected = r.expected_frames();
                    if n.abs_diff(expected) > 1 {
                        problems.push(format!("{}: {n} frames, expected {expected}", r.clip_id));
                    }
                }
                Err(_) => problems.push(format!(
                    "{}: missing frames directory {}",
                    r.clip_id,
                    self.frames_dir(r).display()
                )),
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ClipRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn audio_path(&self, r: &ClipRecord) -> PathBuf {
        self.root.join(&r.audio_path)
    }

    pub fn frames_dir(&self, r: &ClipRecord) -> PathBuf {
        self.root.join(&r.frames_dir)
    }

    pub fn frame_path(&self, r: &ClipRecord, index: usize) -> PathBuf {
        self.frames_dir(r).join(frame_file_name(index))
    }

    /// Number of `.png` files in the clip's frame directory.
    pub fn frame_count(&self, r: &ClipRecord) -> Result<usize> {
        let dir = self.frames_dir(r);
        let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut n = 0;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            if entry.path().extension().is_some_and(|e| e == "png") {
                n += 1;
            }
        }
        Ok(n)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    /// Loads a clip's audio; frames stay on disk until requested.
    pub fn open_clip(&self, r: &ClipRecord) -> Result<ClipData> {
        let audio = read_wav(&self.audio_path(r))?;
        let frames = self.frame_count(r)?;
        Ok(ClipData {
            record: r.clone(),
            audio,
            frames_dir: self.frames_dir(r),
            frames,
        })
    }
}

/// A clip's audio in memory plus lazy access to its frames.
#[derive(Debug, Clone)]
pub struct ClipData {
    pub record: ClipRecord,
    pub audio: WaveformClip,
    pub frames_dir: PathBuf,
    pub frames: usize,
}

impl ClipData {
    pub fn frame(&self, index: usize) -> Result<Image> {
        if index >= self.frames {
            return Err(Error::invalid(format!(
                "{}: frame {index} of {}",
                self.record.clip_id, self.frames
            )));
        }
        Image::read_png(&self.frames_dir.join(frame_file_name(index)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_defaults_and_names_missing_fields() {
        let text = "{\"clip_id\":\"a\",\"audio_path\":\"a.wav\",\"frames_dir\":\"fa\",\"split\":\"train\"}\n\n";
        let m = Manifest::parse(text, "/x").unwrap();
        assert_eq!(m.records.len(), 1);
        assert_eq!(m.records[0].fps, 10);
        assert_eq!(m.records[0].duration_s, 10.0);
        assert_eq!(m.audio_path(&m.records[0]), PathBuf::from("/x/a.wav"));

        let bad = "{\"clip_id\":\"a\",\"audio_path\":\"a.wav\",\"frames_dir\":\"fa\",\"split\":\"train\"}\n{\"clip_id\":\"b\",\"frames_dir\":\"fb\",\"split\":\"val\"}";
        match Manifest::parse(bad, "/x") {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("audio_path"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_file_loads_as_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        fs::write(&path, "").unwrap();
        assert!(Manifest::load(&path).unwrap().records.is_empty());
    }

    #[test]
    fn validation_lists_every_offender() {
        let dir = tempfile::tempdir().unwrap();
        let text = "{\"clip_id\":\"a\",\"audio_path\":\"a.wav\",\"frames_dir\":\"fa\",\"split\":\"train\"}\n{\"clip_id\":\"b\",\"audio_path\":\"b.wav\",\"frames_dir\":\"fb\",\"split\":\"test\"}";
        let path = dir.path().join("m.jsonl");
        fs::write(&path, text).unwrap();
        match Manifest::load(&path) {
            Err(Error::Validation(p)) => {
                assert_eq!(p.len(), 4);
                assert!(p.iter().any(|s| s.starts_with("a:")));
                assert!(p.iter().any(|s| s.starts_with("b:")));
            }
            other => panic!("{other:?}"),
        }
    }
}
