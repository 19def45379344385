//! Mini-batch training: batch assembly, the objective, one optimizer step,
//! and the epoch loop with validation, checkpoints and a loss log.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    Adam, AdamConfig, Checkpoint, Mode, ParamStore, Real, RngStreams, Tape, Tensor, Var,
};
use crate::data::{
    example_at, sample_training_pair, segment_samples, AugmentParams, ClipData, Manifest, SampleConfig, Split,
    TrainingExample, CROP_HEIGHT, CROP_WIDTH,
};
use crate::dsp::{Stft, StftConfig};
use crate::error::{Error, Result};
use crate::losses::{
    build_contrastive_sets, loss_scl, reconstruction, total_loss, Complex, LossConfig,
};
use crate::metrics::{compensated_mean, stft_distance, StereoSpectrogram};
use crate::model::{planes_to_spectrogram, ModelConfig, Network};

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const LOSS_LOG: &str = "loss.csv";
pub const VALIDATION_LOG: &str = "validation.csv";

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Segments drawn from every training clip per epoch.
    pub segments_per_clip: usize,
    /// Evenly spaced segments per validation clip.
    pub val_segments_per_clip: usize,
    pub seed: u64,
    pub lr_image: f64,
    pub lr_audio: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            batch_size: 16,
            epochs: 20,
            segments_per_clip: 8,
            val_segments_per_clip: 4,
            seed: 0,
            lr_image: adam.lr_image,
            lr_audio: adam.lr_audio,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr_image: self.lr_image,
            lr_audio: self.lr_audio,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self, contrastive: bool) -> Result<()> {
        let mut problems = Vec::new();
        let min_batch = if contrastive { 2 } else { 1 };
        if self.batch_size < min_batch {
            problems.push(format!("batch_size must be at least {min_batch}, got {}", self.batch_size));
        }
        if self.epochs == 0 || self.segments_per_clip == 0 {
            problems.push("epochs and segments_per_clip must be positive".into());
        }
        for (name, v) in [("lr_image", self.lr_image), ("lr_audio", self.lr_audio), ("eps", self.eps)] {
            if !(v >= 0.0 && v.is_finite()) {
                problems.push(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                problems.push(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Stacked network inputs and targets for `n` examples.
#[derive(Debug, Clone)]
pub struct Batch {
    pub n: usize,
    /// `(F, T)` of every spectrogram plane.
    pub grid: (usize, usize),
    /// `(H, W)` of every frame.
    pub image: (usize, usize),
    pub mono: Vec<f64>,
    pub diff: Vec<f64>,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub frames: Vec<f64>,
    pub positives: Vec<f64>,
    pub shuffled: Vec<f64>,
}

impl Batch {
    /// Stacks examples whose spectrograms are `F × T` and frames 224 × 448.
    pub fn from_examples(examples: &[TrainingExample], freq_bins: usize) -> Result<Self> {
        let first = examples.first().ok_or_else(|| Error::invalid("empty batch"))?;
        if freq_bins == 0 || first.mono.len() % (2 * freq_bins) != 0 {
            return Err(Error::invalid(format!("{} values are not 2 × {freq_bins} × T", first.mono.len())));
        }
        let grid = (freq_bins, first.mono.len() / (2 * freq_bins));
        let image = (CROP_HEIGHT, CROP_WIDTH);
        let spec_len = 2 * grid.0 * grid.1;
        let image_len = 3 * image.0 * image.1;
        let mut b = Self::empty(examples.len(), grid, image);
        for e in examples {
            let lens = [e.mono.len(), e.diff.len(), e.left.len(), e.right.len()];
            if lens.iter().any(|&l| l != spec_len)
                || [e.frame.len(), e.positive.len(), e.shuffled.len()].iter().any(|&l| l != image_len)
            {
                return Err(Error::invalid(format!("{}: example sizes differ within the batch", e.clip_id)));
            }
            b.mono.extend_from_slice(&e.mono);
            b.diff.extend_from_slice(&e.diff);
            b.left.extend_from_slice(&e.left);
            b.right.extend_from_slice(&e.right);
            b.frames.extend_from_slice(&e.frame);
            b.positives.extend_from_slice(&e.positive);
            b.shuffled.extend_from_slice(&e.shuffled);
        }
        Ok(b)
    }

    fn empty(n: usize, grid: (usize, usize), image: (usize, usize)) -> Self {
        Self {
            n,
            grid,
            image,
            mono: Vec::new(),
            diff: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
            frames: Vec::new(),
            positives: Vec::new(),
            shuffled: Vec::new(),
        }
    }

    pub fn spec_shape(&self) -> [usize; 4] {
        [self.n, 2, self.grid.0, self.grid.1]
    }

    pub fn image_shape(&self) -> [usize; 4] {
        [self.n, 3, self.image.0, self.image.1]
    }
}

/// Scalar values of every objective term for one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub mse: f64,
    pub apm: f64,
    pub phs: f64,
    pub rec: f64,
    /// Zero when the contrastive weight is zero (the term is then skipped).
    pub scl: f64,
    pub total: f64,
}

impl StepLosses {
    pub fn is_finite(&self) -> bool {
        [self.mse, self.apm, self.phs, self.rec, self.scl, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Tape handles of the objective and the prediction it was computed from.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub total: Var,
    pub mse: Var,
    pub apm: Var,
    pub phs: Var,
    pub rec: Var,
    pub scl: Option<Var>,
    pub pred: Complex,
}

impl Objective {
    pub fn values<T: Real>(&self, tape: &Tape<T>) -> StepLosses {
        let v = |x: Var| tape.value(x).item().as_f64();
        StepLosses {
            mse: v(self.mse),
            apm: v(self.apm),
            phs: v(self.phs),
            rec: v(self.rec),
            scl: self.scl.map_or(0.0, v),
            total: v(self.total),
        }
    }
}

fn constant<T: Real>(tape: &mut Tape<T>, shape: &[usize], data: &[f64]) -> Result<Var> {
    Ok(tape.constant(Tensor::from_f64(shape, data)?))
}

/// Records `ℓ_REC + λ·ℓ_SCL` for a batch. The contrastive embeddings are built
/// from the audio bottleneck before the image encoder's own pass, so in
/// training mode they read the running statistics from before this batch.
pub fn objective<T: Real>(
    tape: &mut Tape<T>,
    net: &Network,
    store: &mut ParamStore<T>,
    batch: &Batch,
    loss: &LossConfig,
    mode: Mode,
) -> Result<Objective> {
    let spec = batch.spec_shape();
    let img = batch.image_shape();
    let mono = constant(tape, &spec, &batch.mono)?;
    let frames = constant(tape, &img, &batch.frames)?;
    let (ua, skips) = net.encode_audio(tape, store, mono, mode)?;
    let scl = if loss.lambda != 0.0 {
        let positives = constant(tape, &img, &batch.positives)?;
        let shuffled = constant(tape, &img, &batch.shuffled)?;
        let cb = build_contrastive_sets(tape, net, store, ua, frames, positives, shuffled)?;
        Some(loss_scl(tape, &cb, loss.tau)?)
    } else {
        None
    };
    let visual = net.encode_image(tape, store, frames, mode)?;
    let out = net.forward_encoded(tape, store, mono, ua, &skips, visual, mode)?;

    let mono_c = Complex::from_planes(tape, mono)?;
    let diff = constant(tape, &spec, &batch.diff)?;
    let gt_diff = Complex::from_planes(tape, diff)?;
    let left = constant(tape, &spec, &batch.left)?;
    let right = constant(tape, &spec, &batch.right)?;
    let gt_binaural = [Complex::from_planes(tape, left)?, Complex::from_planes(tape, right)?];
    let pred = Complex::new(out.pred_re, out.pred_im);
    let r = reconstruction(tape, loss, mono_c, gt_diff, pred, gt_binaural)?;
    let total = match scl {
        Some(s) => total_loss(tape, r.rec, s, loss.lambda)?,
        None => r.rec,
    };
    Ok(Objective {
        total,
        mse: r.mse,
        apm: r.apm,
        phs: r.phs,
        rec: r.rec,
        scl,
        pred,
    })
}

/// L2 norm of every parameter gradient, by name.
pub fn grad_norms<T: Real>(store: &ParamStore<T>) -> Vec<(String, f64)> {
    store
        .params()
        .iter()
        .map(|p| {
            let n = p
                .grad
                .as_ref()
                .map_or(0.0, |g| g.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt());
            (p.name.clone(), n)
        })
        .collect()
}

/// Forward, backward and one Adam update. A non-finite loss or gradient
/// leaves the parameters untouched and returns [`Error::Numeric`] carrying a
/// JSON diagnostic (component losses and gradient norms).
pub fn train_step<T: Real>(
    net: &Network,
    store: &mut ParamStore<T>,
    adam: &mut Adam<T>,
    batch: &Batch,
    loss: &LossConfig,
) -> Result<StepLosses> {
    let mut tape = Tape::new();
    let obj = objective(&mut tape, net, store, batch, loss, Mode::Train)?;
    let values = obj.values(&tape);
    store.zero_grads();
    if values.is_finite() {
        tape.backward(obj.total)?;
        store.accumulate_grads(&tape)?;
    }
    let norms = grad_norms(store);
    if !values.is_finite() || norms.iter().any(|(_, n)| !n.is_finite()) {
        store.zero_grads();
        let dump = serde_json::json!({
            "adam_step": adam.step,
            "losses": values,
            "grad_norms": norms.iter().map(|(k, v)| (k.clone(), if v.is_finite() { serde_json::json!(v) } else { serde_json::Value::Null })).collect::<serde_json::Map<_, _>>(),
        });
        return Err(Error::Numeric(dump.to_string()));
    }
    adam.step(store)?;
    Ok(values)
}

/// Mean over a set of examples of the segment-level STFT distance between
/// predicted and true binaural spectrograms, in eval mode.
pub fn validation_distance(
    net: &Network,
    store: &mut ParamStore<f32>,
    examples: &[TrainingExample],
    batch_size: usize,
    stft: &StftConfig,
) -> Result<f64> {
    let mut distances = Vec::with_capacity(examples.len());
    let f = net.config.freq_bins;
    for chunk in examples.chunks(batch_size.max(1)) {
        let batch = Batch::from_examples(chunk, f)?;
        let mut tape = Tape::inference();
        let spec = batch.spec_shape();
        let mono = constant(&mut tape, &spec, &batch.mono)?;
        let frames = constant(&mut tape, &batch.image_shape(), &batch.frames)?;
        let out = net.forward(&mut tape, store, mono, frames, Mode::Eval)?;
        let t = batch.grid.1;
        let plane = f * t;
        let (pr, pi) = (tape.value(out.pred_re).data(), tape.value(out.pred_im).data());
        for (i, e) in chunk.iter().enumerate() {
            let take = |v: &[f64], c: usize| v[(2 * i + c) * plane..(2 * i + c + 1) * plane].to_vec();
            let pred_d = (
                pr[i * plane..(i + 1) * plane].iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
                pi[i * plane..(i + 1) * plane].iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
            );
            let m = (&e.mono[..plane], &e.mono[plane..]);
            let half = |a: &[f64], b: &[f64], sign: f64| -> Vec<f64> {
                a.iter().zip(b).map(|(x, y)| 0.5 * (x + sign * y)).collect()
            };
            let spec_of = |re: &[f64], im: &[f64]| planes_to_spectrogram(re, im, f, t, stft);
            let pred = StereoSpectrogram::new(
                spec_of(&half(m.0, &pred_d.0, 1.0), &half(m.1, &pred_d.1, 1.0))?,
                spec_of(&half(m.0, &pred_d.0, -1.0), &half(m.1, &pred_d.1, -1.0))?,
            )?;
            let gt = StereoSpectrogram::new(
                spec_of(&take(&batch.left, 0), &take(&batch.left, 1))?,
                spec_of(&take(&batch.right, 0), &take(&batch.right, 1))?,
            )?;
            distances.push(stft_distance(&pred, &gt)?);
        }
    }
    Ok(compensated_mean(&distances))
}

/// Everything a training run needs besides its output directory.
#[derive(Debug, Clone)]
pub struct TrainSetup {
    pub manifest: Manifest,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub sample: SampleConfig,
    pub optim: TrainConfig,
    pub stft: StftConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub best_val: f64,
    pub epochs_run: usize,
    pub steps_run: u64,
}

fn meta_json(setup: &TrainSetup, epoch: usize, step: u64, best_val: f64, val: f64) -> serde_json::Value {
    serde_json::json!({
        "epoch": epoch,
        "step": step,
        "best_val_stft": if best_val.is_finite() { serde_json::json!(best_val) } else { serde_json::Value::Null },
        "val_stft": if val.is_finite() { serde_json::json!(val) } else { serde_json::Value::Null },
        "loss": setup.loss,
        "sample": setup.sample,
        "optim": setup.optim,
    })
}

fn load_split(manifest: &Manifest, split: Split) -> Result<Vec<ClipData>> {
    manifest.split(split).map(|r| manifest.open_clip(r)).collect()
}

fn append(path: &Path, text: &str) -> Result<()> {
    use std::io::Write;
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Fixed validation examples: evenly spaced segments, centred crops.
fn validation_examples(
    clips: &[ClipData],
    stft: &Stft,
    cfg: &SampleConfig,
    per_clip: usize,
    streams: &RngStreams,
) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::new();
    for (ci, clip) in clips.iter().enumerate() {
        let seg = segment_samples(clip.audio.sample_rate(), cfg.segment_s);
        let span = clip.audio.len().saturating_sub(seg);
        for k in 0..per_clip {
            let start = if per_clip > 1 { span * k / (per_clip - 1) } else { span / 2 };
            let mut rng = streams.stream_at("val", (ci * per_clip + k) as u64);
            out.push(example_at(clip, stft, cfg, start, &AugmentParams::CENTRE, &mut rng)?);
        }
    }
    Ok(out)
}

/// Trains from scratch, or from `resume` (a checkpoint written by an earlier
/// run of the same setup), writing checkpoints and logs under `out_dir`.
///
/// Steps are seeded by their global index, so a resumed run draws exactly the
/// batches the uninterrupted run would have drawn.
pub fn run_training(setup: &TrainSetup, out_dir: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    let cfg = &setup.optim;
    setup.loss.validate()?;
    cfg.validate(setup.loss.lambda != 0.0)?;
    if setup.sample.freq_bins != setup.model.freq_bins {
        return Err(Error::invalid(format!(
            "sample.freq_bins {} differs from model.freq_bins {}",
            setup.sample.freq_bins, setup.model.freq_bins
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let stft = Stft::new(setup.stft)?;
    let train = load_split(&setup.manifest, Split::Train)?;
    if train.is_empty() {
        return Err(Error::invalid("the manifest has no training clips"));
    }
    let val = load_split(&setup.manifest, Split::Val)?;
    let streams = RngStreams::new(cfg.seed);
    let val_examples = validation_examples(&val, &stft, &setup.sample, cfg.val_segments_per_clip, &streams)?;
    if val_examples.is_empty() {
        log::warn!("no validation clips; the last epoch is kept as best");
    }

    let (net, mut store) = Network::build::<f32>(&setup.model, cfg.seed)?;
    let mut adam = Adam::new(cfg.adam(), &store);
    let model_json = setup.model.to_json();
    let mut first_epoch = 0;
    let mut best_val = f64::INFINITY;
    let loss_log = out_dir.join(LOSS_LOG);
    let val_log = out_dir.join(VALIDATION_LOG);
    match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            ckpt.ensure_config(&model_json)?;
            ckpt.restore(&mut store, Some(&mut adam))?;
            first_epoch = ckpt.meta["epoch"]
                .as_u64()
                .ok_or_else(|| Error::Checkpoint(format!("{}: no epoch in metadata", path.display())))?
                as usize
                + 1;
            best_val = ckpt.meta["best_val_stft"].as_f64().unwrap_or(f64::INFINITY);
            log::info!("resuming after epoch {} (step {})", first_epoch - 1, adam.step);
        }
        None => {
            fs::write(&loss_log, "epoch,step,mse,apm,phs,rec,scl,total\n").map_err(|e| Error::io(&loss_log, e))?;
            fs::write(&val_log, "epoch,step,val_stft,best\n").map_err(|e| Error::io(&val_log, e))?;
        }
    }

    let items = train.len() * cfg.segments_per_clip;
    let steps_per_epoch = items / cfg.batch_size;
    if steps_per_epoch == 0 {
        return Err(Error::invalid(format!(
            "{items} segments per epoch do not fill one batch of {}",
            cfg.batch_size
        )));
    }
    let best_path = out_dir.join(BEST_CHECKPOINT);
    let last_path = out_dir.join(LAST_CHECKPOINT);
    let mut epochs_run = 0;
    let mut steps_run = 0;
    for epoch in first_epoch..cfg.epochs {
        let started = std::time::Instant::now();
        let mut order: Vec<usize> = (0..items).map(|i| i % train.len()).collect();
        order.shuffle(&mut streams.stream_at("epoch", epoch as u64));
        let mut rows = String::new();
        let mut epoch_losses = Vec::with_capacity(steps_per_epoch);
        for chunk in order.chunks_exact(cfg.batch_size) {
            let step = adam.step;
            let mut rng = streams.stream_at("sample", step);
            let examples = chunk
                .iter()
                .map(|&c| sample_training_pair(&train[c], &stft, &setup.sample, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let batch = Batch::from_examples(&examples, setup.model.freq_bins)?;
            let l = match train_step(&net, &mut store, &mut adam, &batch, &setup.loss) {
                Ok(l) => l,
                Err(Error::Numeric(detail)) => {
                    let dump = out_dir.join(format!("nonfinite_step_{step}.json"));
                    let _ = fs::write(&dump, &detail);
                    append(&loss_log, &rows)?;
                    return Err(Error::Numeric(format!("step {step} (epoch {epoch}): {detail}")));
                }
                Err(e) => return Err(e),
            };
            let _ = writeln!(
                rows,
                "{epoch},{},{},{},{},{},{},{}",
                adam.step, l.mse, l.apm, l.phs, l.rec, l.scl, l.total
            );
            epoch_losses.push(l.total);
            steps_run += 1;
        }
        append(&loss_log, &rows)?;

        let val_d = if val_examples.is_empty() {
            f64::NAN
        } else {
            validation_distance(&net, &mut store, &val_examples, cfg.batch_size, &setup.stft)?
        };
        let improved = val_examples.is_empty() || val_d < best_val;
        if improved && val_d.is_finite() {
            best_val = val_d;
        }
        append(&val_log, &format!("{epoch},{},{val_d},{}\n", adam.step, improved as u8))?;
        let ckpt = Checkpoint::capture(
            model_json.clone(),
            meta_json(setup, epoch, adam.step, best_val, val_d),
            &store,
            Some(&adam),
        )?;
        ckpt.save(&last_path)?;
        if improved {
            ckpt.save(&best_path)?;
        }
        log::info!(
            "epoch {epoch}: mean loss {:.5}, val stft {val_d:.5}{} ({:.1}s)",
            compensated_mean(&epoch_losses),
            if improved { " *" } else { "" },
            started.elapsed().as_secs_f64()
        );
        epochs_run += 1;
    }
    if !best_path.exists() {
        // A resumed run that had nothing left to do still leaves a best checkpoint.
        Checkpoint::capture(model_json, meta_json(setup, cfg.epochs.saturating_sub(1), adam.step, best_val, best_val), &store, Some(&adam))?
            .save(&best_path)?;
    }
    Ok(TrainOutcome {
        best_checkpoint: best_path,
        last_checkpoint: last_path,
        loss_log,
        best_val,
        epochs_run,
        steps_run,
    })
}
