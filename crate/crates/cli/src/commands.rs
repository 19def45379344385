//! The five subcommands, as library functions the binary and the tests share.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use binaural_core::autodiff::Checkpoint;
use binaural_core::checks::gradient_suite;
use binaural_core::data::{write_synthetic_dataset, Manifest, MANIFEST_FILE};
use binaural_core::dsp::wav::{read_wav, write_wav};
use binaural_core::dsp::{difference_spectrogram, make_mono, Channel, StftConfig, WaveformClip};
use binaural_core::inference::{
    evaluate_split, write_magnitude_png, Binauralizer, CropMode, FrameDir, Predictor, SplitEvaluation,
};
use binaural_core::metrics::MetricReport;
use binaural_core::model::Network;
use binaural_core::train::{run_training, TrainOutcome, TrainSetup};

use crate::config::{usage, RunConfig};

/// Resolved configuration written next to training outputs.
pub const RUN_CONFIG_FILE: &str = "config.toml";
pub const BASELINE_REPORT: &str = "baseline.json";

/// Report file for a model evaluated with the given crop mode.
pub fn report_file(crop: CropMode) -> String {
    format!("{}.json", crop.label())
}

/// Some clips could not be evaluated (exit status 2).
#[derive(Debug)]
pub struct SkippedClips(pub Vec<(String, String)>);

impl std::fmt::Display for SkippedClips {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} clip(s) skipped:", self.0.len())?;
        for (id, why) in &self.0 {
            write!(f, " {id} ({why})")?;
        }
        Ok(())
    }
}

impl std::error::Error for SkippedClips {}

fn is_non_empty_dir(dir: &Path) -> bool {
    fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false)
}

pub fn synth(cfg: &RunConfig, out: &Path, force: bool) -> Result<Manifest> {
    let manifest = write_synthetic_dataset(out, &cfg.data.synth, force)
        .with_context(|| format!("synthesizing into {}", out.display()))?;
    Ok(manifest)
}

fn manifest_path(cfg: &RunConfig, flag: Option<&Path>) -> Result<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.data.manifest.clone())
        .ok_or_else(|| usage("no manifest: pass --manifest or set data.manifest"))
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    Manifest::load(path).with_context(|| format!("loading manifest {}", path.display()))
}

/// Trains into `out`. Without `data.manifest` the synthetic dataset is
/// generated under `<out>/data` first. The resolved configuration, with the
/// manifest path filled in, is written to `<out>/config.toml`.
pub fn train(cfg: &RunConfig, out: &Path, resume: Option<&Path>, force: bool) -> Result<TrainOutcome> {
    if resume.is_none() && !force && is_non_empty_dir(out) {
        return Err(anyhow!(
            "{} is not empty; pass --force to train into it or --resume to continue",
            out.display()
        ));
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let manifest_file = match &cfg.data.manifest {
        Some(path) => path.clone(),
        None => {
            let root = out.join("data");
            if resume.is_none() {
                synth(cfg, &root, force)?;
            }
            root.join(MANIFEST_FILE)
        }
    };
    let manifest = load_manifest(&manifest_file)?;
    let mut resolved = cfg.clone();
    resolved.data.manifest = Some(fs::canonicalize(&manifest_file).unwrap_or(manifest_file));
    let config_path = out.join(RUN_CONFIG_FILE);
    fs::write(&config_path, resolved.to_toml()).with_context(|| format!("writing {}", config_path.display()))?;

    let setup = TrainSetup {
        manifest,
        model: cfg.model.clone(),
        loss: cfg.loss.clone(),
        sample: cfg.sample.clone(),
        optim: cfg.optim.clone(),
        stft: StftConfig::default(),
    };
    Ok(run_training(&setup, out, resume)?)
}

/// Loads a checkpoint into a network built from `cfg.model`; a checkpoint
/// trained under another model configuration is refused.
pub fn load_model(cfg: &RunConfig, checkpoint: &Path, crop: CropMode, threads: usize) -> Result<Binauralizer> {
    let ckpt = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    ckpt.ensure_config(&cfg.model.to_json())
        .with_context(|| format!("{} was trained with another model configuration", checkpoint.display()))?;
    let (net, mut store) = Network::build::<f32>(&cfg.model, 0)?;
    ckpt.restore(&mut store, None)?;
    let mut b = Binauralizer::new(net, store, crop);
    b.target_rms = cfg.sample.target_rms;
    b.threads = threads;
    Ok(b)
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Score the mono-mono baseline instead of a checkpoint.
    pub baseline: bool,
    /// `None` evaluates both crop modes.
    pub tdss: Option<bool>,
    pub threads: usize,
    pub out: PathBuf,
}

/// Writes one JSON + CSV report per predictor and returns them with their
/// file paths. Fails with [`SkippedClips`] after writing if any clip failed.
pub fn eval(cfg: &RunConfig, opts: &EvalOptions) -> Result<Vec<(PathBuf, MetricReport)>> {
    let manifest = load_manifest(&manifest_path(cfg, opts.manifest.as_deref())?)?;
    fs::create_dir_all(&opts.out).with_context(|| format!("creating {}", opts.out.display()))?;
    let stft = StftConfig::default();
    let split = cfg.data.eval_split;
    let mut jobs: Vec<(PathBuf, Predictor, serde_json::Value)> = Vec::new();
    if opts.baseline {
        jobs.push((opts.out.join(BASELINE_REPORT), Predictor::MonoMono, serde_json::json!({})));
    } else {
        let checkpoint = opts
            .checkpoint
            .as_deref()
            .ok_or_else(|| usage("eval needs --checkpoint or --baseline"))?;
        let modes = match opts.tdss {
            Some(flag) => vec![CropMode::from_flag(flag)],
            None => vec![CropMode::Tdss, CropMode::Centre],
        };
        let base = load_model(cfg, checkpoint, CropMode::Tdss, opts.threads)?;
        let hash = binaural_core::autodiff::checkpoint::config_hash(&cfg.model.to_json());
        for crop in modes {
            let mut b = base.clone();
            b.crop = crop;
            let config = serde_json::json!({
                "model": cfg.model.to_json(),
                "model_config_hash": hash,
                "crop": crop.label(),
                "target_rms": cfg.sample.target_rms,
            });
            jobs.push((opts.out.join(report_file(crop)), Predictor::Model(Box::new(b)), config));
        }
    }
    let mut written = Vec::new();
    let mut skipped = Vec::new();
    for (path, predictor, config) in jobs {
        let SplitEvaluation { report, skipped: s } = evaluate_split(&manifest, split, &predictor, &stft, config)?;
        report.write(&path).with_context(|| format!("writing {}", path.display()))?;
        skipped.extend(s);
        written.push((path, report));
    }
    println!("{}", aggregate_table(&written));
    if !skipped.is_empty() {
        return Err(SkippedClips(skipped).into());
    }
    Ok(written)
}

/// Plain-text table of aggregate metrics, one row per report.
pub fn aggregate_table(reports: &[(PathBuf, MetricReport)]) -> String {
    let mut s = format!(
        "{:<20} {:>5} {:>9} {:>9} {:>9} {:>9} {:>9} {:>8}\n",
        "report", "clips", "stft_d", "env_d", "mag_d", "phs_d", "wav_d", "snr_db"
    );
    for (path, r) in reports {
        let a = &r.aggregate;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{name:<20} {:>5} {:>9.5} {:>9.5} {:>9.5} {:>9.5} {:>9.5} {:>8.3}",
            a.clips, a.stft_d, a.env_d, a.mag_d, a.phs_d, a.wav_d, a.snr_db
        );
    }
    s.trim_end().to_string()
}

/// Input of `infer`.
#[derive(Debug, Clone)]
pub enum InferInput {
    /// Every clip listed in a manifest.
    Manifest(PathBuf),
    /// One recording and its frame directory.
    Pair { wav: PathBuf, frames: PathBuf, fps: u32 },
}

fn mono_of(clip: &WaveformClip) -> Result<WaveformClip> {
    if clip.has(Channel::Mono) {
        Ok(clip.clone())
    } else {
        Ok(make_mono(clip)?)
    }
}

fn render(b: &Binauralizer, mono: &WaveformClip, stereo: WaveformClip, out: &Path, name: &str, images: bool) -> Result<PathBuf> {
    let wav = out.join(format!("{name}.wav"));
    write_wav(&wav, &stereo).with_context(|| format!("writing {}", wav.display()))?;
    if images {
        let png = out.join(format!("{name}_diff.png"));
        write_magnitude_png(&difference_spectrogram(&stereo, &b.stft)?, &png)?;
    }
    log::debug!("{name}: {} samples", mono.len());
    Ok(wav)
}

/// Binauralizes the input and writes one stereo WAV per clip (plus a
/// difference-spectrogram image each when `images`). Returns the WAV paths.
pub fn infer(b: &Binauralizer, input: &InferInput, out: &Path, images: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = Vec::new();
    match input {
        InferInput::Manifest(path) => {
            let manifest = load_manifest(path)?;
            for record in &manifest.records {
                let clip = manifest.open_clip(record)?;
                let mono = mono_of(&clip.audio)?;
                let stereo = b
                    .binauralize(&mono, record.fps, &clip)
                    .with_context(|| format!("binauralizing {}", record.clip_id))?;
                written.push(render(b, &mono, stereo, out, &record.clip_id, images)?);
            }
        }
        InferInput::Pair { wav, frames, fps } => {
            let mono = mono_of(&read_wav(wav)?)?;
            let frames = FrameDir::open(frames)?;
            let stereo = b.binauralize(&mono, *fps, &frames)?;
            let stem = wav.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "clip".into());
            written.push(render(b, &mono, stereo, out, &format!("{stem}_binaural"), images)?);
        }
    }
    Ok(written)
}

/// Runs every gradient check and prints one row each. A failing check
/// yields a numeric error (exit status 3).
pub fn gradcheck(seed: u64) -> Result<usize> {
    let reports = gradient_suite(seed);
    let mut failed = Vec::new();
    println!("{:<32} {:>12} {:>8}  result", "check", "max_rel_err", "tol");
    for r in &reports {
        println!(
            "{:<32} {:>12.3e} {:>8.0e}  {}",
            r.label,
            r.worst(),
            r.tol,
            if r.passed { "ok" } else { "FAIL" }
        );
        if !r.passed {
            failed.push(match &r.failure {
                Some(why) => format!("{} ({why})", r.label),
                None => r.label.clone(),
            });
        }
    }
    if failed.is_empty() {
        println!("{} checks passed", reports.len());
        Ok(reports.len())
    } else {
        Err(binaural_core::Error::Numeric(format!("gradient check failed: {}", failed.join(", "))).into())
    }
}
