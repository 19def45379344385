//! Run configuration.
//!
//! One TOML file with a section per concern:
//!
//! | section  | contents |
//! |----------|----------|
//! | `data`   | manifest path, split to evaluate, and `[data.synth]` scene generator settings |
//! | `model`  | network widths and input geometry |
//! | `loss`   | term weights, temperature, phase threshold, shuffle grid |
//! | `sample` | segment length, RMS target, jitter, pixel normalization |
//! | `optim`  | batch size, epochs, segments per clip, seed, learning rates, Adam moments |
//! | `infer`  | TDSS flag, worker threads, spectrogram images, output directory |
//!
//! Every key is optional and falls back to the default of its struct. Unknown
//! keys anywhere are an error.
//!
//! Environment variables override the file: `BINAURAL__<SECTION>__<KEY>`,
//! with further `__` for nested tables, e.g. `BINAURAL__OPTIM__EPOCHS=3` or
//! `BINAURAL__DATA__SYNTH__ITD=true`. Values are read as TOML scalars or
//! arrays (`BINAURAL__LOSS__SHUFFLE_GRID=[7,14]`).

use std::fmt;
use std::path::{Path, PathBuf};

use binaural_core::data::{SampleConfig, Split, SynthConfig};
use binaural_core::losses::LossConfig;
use binaural_core::model::ModelConfig;
use binaural_core::train::TrainConfig;
use figment::providers::{Env, Format, Serialized, Toml};
use figment::Figment;
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "BINAURAL__";

/// A problem with the command line or the configuration (exit status 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// JSON-lines clip manifest. When unset, `train` synthesizes `synth` into `<out>/data`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Split scored by `eval`.
    pub eval_split: Split,
    pub synth: SynthConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            eval_split: Split::Test,
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    /// Five-region crop schedule at inference; off means centre crops.
    pub tdss: bool,
    /// Windows evaluated in parallel.
    pub threads: usize,
    /// `infer` also writes difference-spectrogram magnitude images.
    pub spectrograms: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            tdss: true,
            threads: 1,
            spectrograms: false,
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub sample: SampleConfig,
    pub optim: TrainConfig,
    pub infer: InferConfig,
}

impl RunConfig {
    /// Defaults, then the file (if any), then `BINAURAL__*` variables.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let mut figment = Figment::from(Serialized::defaults(RunConfig::default()));
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            figment = figment.merge(Toml::string(&text));
        }
        Self::extract(figment.merge(Env::prefixed(ENV_PREFIX).split("__")))
    }

    /// Parses TOML text without consulting the environment.
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Self::extract(Figment::from(Serialized::defaults(RunConfig::default())).merge(Toml::string(text)))
    }

    fn extract(figment: Figment) -> anyhow::Result<Self> {
        let cfg: RunConfig = figment.extract().map_err(|e| usage(format!("configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Cross-section consistency plus each section's own checks.
    pub fn validate(&self) -> anyhow::Result<()> {
        let checks = [
            ("model", self.model.validate()),
            ("loss", self.loss.validate()),
            ("data.synth", self.data.synth.validate()),
            ("optim", self.optim.validate(self.loss.lambda != 0.0)),
        ];
        for (section, result) in checks {
            result.map_err(|e| usage(format!("[{section}] {e}")))?;
        }
        if self.sample.freq_bins != self.model.freq_bins {
            return Err(usage(format!(
                "sample.freq_bins {} differs from model.freq_bins {}",
                self.sample.freq_bins, self.model.freq_bins
            )));
        }
        if self.sample.shuffle_grid != self.loss.shuffle_grid {
            return Err(usage(format!(
                "sample.shuffle_grid {:?} differs from loss.shuffle_grid {:?}",
                self.sample.shuffle_grid, self.loss.shuffle_grid
            )));
        }
        if self.infer.threads == 0 {
            return Err(usage("infer.threads must be at least 1"));
        }
        Ok(())
    }
}
