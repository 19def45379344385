//! Self-describing binary checkpoints.
//!
//! Layout: a first text line `binaural-checkpoint <version> <header-bytes>`,
//! then a JSON header of exactly that many bytes and a newline, then the
//! tensor payload as little-endian `f32` in manifest order.
//!
//! The header carries the model configuration together with its SHA-256, the
//! optimizer step, free-form training metadata, and a manifest of
//! `(name, kind, shape, offset)` entries. Offsets count `f32` elements.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Adam, AdamConfig, ParamStore, Tensor};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "binaural-checkpoint";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Param,
    AdamFirstMoment,
    AdamSecondMoment,
    RunningMean,
    RunningVar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub kind: EntryKind,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    config_sha256: String,
    model_config: serde_json::Value,
    adam: Option<AdamConfig>,
    adam_step: u64,
    meta: serde_json::Value,
    manifest: Vec<ManifestEntry>,
}

/// In-memory checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: serde_json::Value,
    pub adam: Option<AdamConfig>,
    pub adam_step: u64,
    /// Training bookkeeping (epoch, best validation score, seed, ...).
    pub meta: serde_json::Value,
    pub manifest: Vec<ManifestEntry>,
    pub payload: Vec<f32>,
}

/// Hex SHA-256 of the canonical JSON text of a configuration value.
pub fn config_hash(config: &serde_json::Value) -> String {
    let text = serde_json::to_string(config).expect("JSON values always serialize");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    /// Snapshots parameters, running statistics and (optionally) optimizer moments.
    pub fn capture(
        model_config: serde_json::Value,
        meta: serde_json::Value,
        store: &ParamStore<f32>,
        adam: Option<&Adam<f32>>,
    ) -> Result<Self> {
        let mut manifest = Vec::new();
        let mut payload = Vec::new();
        let mut push = |name: &str, kind, shape: &[usize], data: &[f32]| {
            manifest.push(ManifestEntry {
                name: name.to_string(),
                kind,
                shape: shape.to_vec(),
                offset: payload.len(),
            });
            payload.extend_from_slice(data);
        };
        for p in store.params() {
            push(&p.name, EntryKind::Param, p.value.shape(), p.value.data());
        }
        if let Some(adam) = adam {
            if adam.first_moment.len() != store.params().len() {
                return Err(Error::Checkpoint(format!(
                    "optimizer tracks {} parameters, store has {}",
                    adam.first_moment.len(),
                    store.params().len()
                )));
            }
            for (p, m) in store.params().iter().zip(&adam.first_moment) {
                push(&p.name, EntryKind::AdamFirstMoment, p.value.shape(), m);
            }
            for (p, v) in store.params().iter().zip(&adam.second_moment) {
                push(&p.name, EntryKind::AdamSecondMoment, p.value.shape(), v);
            }
        }
        for (name, stats) in store.buffers() {
            push(name, EntryKind::RunningMean, &[stats.mean.len()], &stats.mean);
            push(name, EntryKind::RunningVar, &[stats.var.len()], &stats.var);
        }
        Ok(Self {
            model_config,
            adam: adam.map(|a| a.config),
            adam_step: adam.map_or(0, |a| a.step),
            meta,
            manifest,
            payload,
        })
    }

    pub fn config_hash(&self) -> String {
        config_hash(&self.model_config)
    }

    /// Fails with a config mismatch unless `expected` hashes to the stored configuration.
    pub fn ensure_config(&self, expected: &serde_json::Value) -> Result<()> {
        let (want, have) = (config_hash(expected), self.config_hash());
        if want != have {
            return Err(Error::ConfigMismatch {
                expected: want,
                found: have,
            });
        }
        Ok(())
    }

    fn entry(&self, name: &str, kind: EntryKind) -> Option<(&ManifestEntry, &[f32])> {
        self.manifest
            .iter()
            .find(|e| e.kind == kind && e.name == name)
            .map(|e| {
                let n: usize = e.shape.iter().product();
                (e, &self.payload[e.offset..e.offset + n])
            })
    }

    /// Copies stored values into `store` (and `adam`, when given). Every parameter
    /// and buffer of `store` must be present with a matching shape.
    pub fn restore(&self, store: &mut ParamStore<f32>, adam: Option<&mut Adam<f32>>) -> Result<()> {
        let lookup = |name: &str, kind: EntryKind, shape: &[usize]| -> Result<Vec<f32>> {
            let (e, data) = self
                .entry(name, kind)
                .ok_or_else(|| Error::Checkpoint(format!("missing {kind:?} entry for {name}")))?;
            if e.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "{name}: stored shape {:?}, model expects {shape:?}",
                    e.shape
                )));
            }
            Ok(data.to_vec())
        };
        let mut values = Vec::with_capacity(store.params().len());
        for p in store.params() {
            values.push(lookup(&p.name, EntryKind::Param, p.value.shape())?);
        }
        let mut moments = None;
        if adam.is_some() {
            let mut m = Vec::new();
            let mut v = Vec::new();
            for p in store.params() {
                m.push(lookup(&p.name, EntryKind::AdamFirstMoment, p.value.shape())?);
                v.push(lookup(&p.name, EntryKind::AdamSecondMoment, p.value.shape())?);
            }
            moments = Some((m, v));
        }
        let mut stats = Vec::with_capacity(store.buffers().len());
        for (name, s) in store.buffers() {
            stats.push((
                lookup(name, EntryKind::RunningMean, &[s.mean.len()])?,
                lookup(name, EntryKind::RunningVar, &[s.var.len()])?,
            ));
        }
        // Everything validated; now mutate.
        for (p, data) in store.params_mut().iter_mut().zip(values) {
            p.value = Tensor::from_vec(p.value.shape(), data)?;
            p.grad = None;
        }
        for ((_, s), (mean, var)) in store.buffers_mut().iter_mut().zip(stats) {
            s.mean = mean;
            s.var = var;
        }
        if let (Some(adam), Some((m, v))) = (adam, moments) {
            adam.first_moment = m;
            adam.second_moment = v;
            adam.step = self.adam_step;
            if let Some(cfg) = self.adam {
                adam.config = cfg;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            format_version: FORMAT_VERSION,
            config_sha256: self.config_hash(),
            model_config: self.model_config.clone(),
            adam: self.adam,
            adam_step: self.adam_step,
            meta: self.meta.clone(),
            manifest: self.manifest.clone(),
        };
        let json = serde_json::to_string_pretty(&header)
            .map_err(|e| Error::Checkpoint(format!("header serialization: {e}")))?;
        let mut out = format!("{MAGIC} {FORMAT_VERSION} {}\n", json.len()).into_bytes();
        out.extend_from_slice(json.as_bytes());
        out.push(b'\n');
        out.reserve(self.payload.len() * 4);
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing first line".into()))?;
        let first = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("first line is not UTF-8".into()))?;
        let mut parts = first.split(' ');
        if parts.next() != Some(MAGIC) {
            return Err(bad("not a checkpoint file".into()));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("unreadable format version".into()))?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("format version {version}, expected {FORMAT_VERSION}")));
        }
        let header_len: usize = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("unreadable header length".into()))?;
        let start = nl + 1;
        let end = start + header_len;
        if bytes.len() < end + 1 || bytes[end] != b'\n' {
            return Err(bad("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[start..end])
            .map_err(|e| bad(format!("header: {e}")))?;
        if header.config_sha256 != config_hash(&header.model_config) {
            return Err(bad("config hash does not match embedded config".into()));
        }
        let raw = &bytes[end + 1..];
        if raw.len() % 4 != 0 {
            return Err(bad(format!("payload of {} bytes is not whole f32s", raw.len())));
        }
        let payload: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        for e in &header.manifest {
            let n: usize = e.shape.iter().product();
            if e.offset + n > payload.len() {
                return Err(bad(format!("entry {} runs past the payload", e.name)));
            }
        }
        Ok(Self {
            model_config: header.model_config,
            adam: header.adam,
            adam_step: header.adam_step,
            meta: header.meta,
            manifest: header.manifest,
            payload,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{ParamGroup, RunningStats};
    use serde_json::json;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("a.w", Tensor::from_vec(&[2, 2], vec![1.0, -2.5, 3.25, 1e-7]).unwrap(), ParamGroup::Image);
        s.add("b.b", Tensor::from_vec(&[3], vec![0.5, f32::MIN_POSITIVE, -0.0]).unwrap(), ParamGroup::Audio);
        let mut rs = RunningStats::new(2);
        rs.mean = vec![0.25, -0.75];
        s.add_buffer("bn0", rs);
        s
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let s = store();
        let mut adam = Adam::new(AdamConfig::default(), &s);
        adam.step = 7;
        adam.first_moment[0][1] = 0.125;
        adam.second_moment[1][2] = 3.0;
        let ck = Checkpoint::capture(json!({"width": 4}), json!({"epoch": 2}), &s, Some(&adam)).unwrap();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);

        let mut s2 = store();
        for p in s2.params_mut() {
            p.value.data_mut().fill(9.0);
        }
        s2.buffers_mut()[0].1.var = vec![5.0, 5.0];
        let mut adam2 = Adam::new(AdamConfig::default(), &s2);
        back.restore(&mut s2, Some(&mut adam2)).unwrap();
        assert_eq!(adam2, adam);
        for (a, b) in s2.params().iter().zip(s.params()) {
            assert_eq!(a.value, b.value);
        }
        assert_eq!(s2.buffers()[0].1, s.buffers()[0].1);
    }

    #[test]
    fn config_mismatch_is_reported() {
        let s = store();
        let ck = Checkpoint::capture(json!({"width": 4}), json!(null), &s, None).unwrap();
        assert!(ck.ensure_config(&json!({"width": 4})).is_ok());
        assert!(matches!(
            ck.ensure_config(&json!({"width": 8})),
            Err(Error::ConfigMismatch { .. })
        ));
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let s = store();
        let ck = Checkpoint::capture(json!({"width": 4}), json!(null), &s, None).unwrap();
        let bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"hello\n").is_err());
        let text = String::from_utf8_lossy(&bytes).replace("\"width\": 4", "\"width\": 5");
        assert!(Checkpoint::from_bytes(text.as_bytes()).is_err());
    }

    #[test]
    fn shape_mismatch_on_restore_leaves_store_untouched() {
        let s = store();
        let ck = Checkpoint::capture(json!({}), json!(null), &s, None).unwrap();
        let mut other = ParamStore::new();
        other.add("a.w", Tensor::<f32>::zeros(&[4]), ParamGroup::Image);
        assert!(ck.restore(&mut other, None).is_err());
        assert!(other.params()[0].value.data().iter().all(|&v| v == 0.0));
    }
}
