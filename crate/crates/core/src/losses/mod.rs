//! Training objectives.
//!
//! Reconstruction terms compare the predicted difference spectrogram with the
//! ground truth (complex MSE and magnitude L1) and the recovered left/right
//! spectrograms (masked squared phase error). The contrastive term scores
//! pooled fused features against a neighbouring frame (positive) and
//! spatially shuffled frames (negatives) with InfoNCE.
//!
//! Spectrogram operands are `(re, im)` pairs of tape handles shaped
//! `[N, 1, F, T]`; every term is divided by `N·F·T`.

mod shuffle;

pub use shuffle::{shuffle_cells, spatial_shuffle};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Mode, ParamStore, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::Network;

/// A complex grid on the tape as separate real and imaginary handles.
#[derive(Debug, Clone, Copy)]
pub struct Complex {
    pub re: Var,
    pub im: Var,
}

impl Complex {
    pub fn new(re: Var, im: Var) -> Self {
        Self { re, im }
    }

    /// Splits a `[N, 2, F, T]` real/imaginary stack into its two planes.
    pub fn from_planes<T: Real>(tape: &mut Tape<T>, planes: Var) -> Result<Self> {
        Ok(Self::new(tape.slice(planes, 1, 0, 1)?, tape.slice(planes, 1, 1, 1)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the contrastive term.
    pub lambda: f64,
    /// Weight of the magnitude term.
    pub zeta: f64,
    /// Weight of the phase term.
    pub eta: f64,
    /// InfoNCE temperature.
    pub tau: f64,
    /// Bins with `|gt| ≤ phase_threshold · max|gt|` are left out of the phase term.
    pub phase_threshold: f64,
    /// Cell grid `(rows, cols)` used to build shuffled negatives.
    pub shuffle_grid: (usize, usize),
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            zeta: 0.005,
            eta: 1.0,
            tau: 0.1,
            phase_threshold: 1e-3,
            shuffle_grid: (14, 28),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [("lambda", self.lambda), ("zeta", self.zeta), ("eta", self.eta)] {
            if !(v >= 0.0 && v.is_finite()) {
                problems.push(format!("{name} must be a finite non-negative weight, got {v}"));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            problems.push(format!("tau must be positive, got {}", self.tau));
        }
        if !(0.0..1.0).contains(&self.phase_threshold) {
            problems.push(format!("phase_threshold must lie in [0, 1), got {}", self.phase_threshold));
        }
        if self.shuffle_grid.0 == 0 || self.shuffle_grid.1 == 0 {
            problems.push("shuffle_grid cells must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

fn check_pair<T: Real>(tape: &Tape<T>, op: &'static str, a: Complex, b: Complex) -> Result<usize> {
    let s = tape.shape(a.re);
    if tape.shape(a.im) != s || tape.shape(b.re) != s || tape.shape(b.im) != s {
        return Err(Error::shape(
            op,
            format!(
                "{:?}/{:?} vs {:?}/{:?}",
                s,
                tape.shape(a.im),
                tape.shape(b.re),
                tape.shape(b.im)
            ),
        ));
    }
    Ok(tape.value(a.re).numel())
}

/// `Σ (Δre² + Δim²) / L`.
pub fn loss_mse<T: Real>(tape: &mut Tape<T>, gt: Complex, pred: Complex) -> Result<Var> {
    let l = check_pair(tape, "loss_mse", gt, pred)?;
    let dr = tape.sub(gt.re, pred.re)?;
    let di = tape.sub(gt.im, pred.im)?;
    let dr = tape.square(dr);
    let di = tape.square(di);
    let s = tape.add(dr, di)?;
    let s = tape.sum(s);
    Ok(tape.scale(s, 1.0 / l as f64))
}

/// `Σ | |gt| − |pred| | / L`.
pub fn loss_apm<T: Real>(tape: &mut Tape<T>, gt: Complex, pred: Complex) -> Result<Var> {
    let l = check_pair(tape, "loss_apm", gt, pred)?;
    let g = tape.hypot(gt.re, gt.im)?;
    let p = tape.hypot(pred.re, pred.im)?;
    let d = tape.sub(g, p)?;
    let d = tape.abs(d);
    let s = tape.sum(d);
    Ok(tape.scale(s, 1.0 / l as f64))
}

/// Mask of bins whose ground-truth magnitude exceeds `threshold × max|gt|`,
/// the maximum taken per batch item over every channel in `gts`.
fn phase_mask<T: Real>(tape: &Tape<T>, gts: &[Complex], threshold: f64) -> Tensor<T> {
    let shape = tape.shape(gts[0].re).to_vec();
    let n = shape[0];
    let per_item = tape.value(gts[0].re).numel() / n;
    let mags: Vec<Vec<f64>> = gts
        .iter()
        .map(|g| {
            let (re, im) = (tape.value(g.re).data(), tape.value(g.im).data());
            re.iter().zip(im).map(|(r, i)| r.to_f64().unwrap_or(f64::NAN).hypot(i.to_f64().unwrap_or(f64::NAN))).collect()
        })
        .collect();
    let mut mask = vec![T::zero(); per_item * n];
    let mut out = Vec::new();
    for mag in &mags {
        for item in 0..n {
            let range = item * per_item..(item + 1) * per_item;
            let peak = mags
                .iter()
                .flat_map(|m| m[range.clone()].iter())
                .fold(0.0f64, |a, &b| a.max(b));
            for i in range {
                mask[i] = if mag[i] > threshold * peak { T::one() } else { T::zero() };
            }
        }
        out.extend_from_slice(&mask);
    }
    Tensor::from_vec(&[gts.len() * per_item * n], out).expect("mask length")
}

/// `Σ_channels Σ_masked wrap(∠gt − ∠pred)² / L` over paired channels.
pub fn loss_phs<T: Real>(tape: &mut Tape<T>, gt: &[Complex], pred: &[Complex], threshold: f64) -> Result<Var> {
    if gt.is_empty() || gt.len() != pred.len() {
        return Err(Error::shape("loss_phs", format!("{} vs {} channels", gt.len(), pred.len())));
    }
    let mut l = 0;
    for (&g, &p) in gt.iter().zip(pred) {
        l = check_pair(tape, "loss_phs", g, p)?;
        if tape.shape(g.re) != tape.shape(gt[0].re) {
            return Err(Error::shape("loss_phs", "channels differ in shape"));
        }
    }
    let mask = phase_mask(tape, gt, threshold);
    let shape = tape.shape(gt[0].re).to_vec();
    let mut angles = Vec::with_capacity(gt.len());
    for (&g, &p) in gt.iter().zip(pred) {
        // angle of p·conj(g), already wrapped to (−π, π]
        let a = tape.mul(g.re, p.im)?;
        let b = tape.mul(g.im, p.re)?;
        let y = tape.sub(a, b)?;
        let c = tape.mul(g.re, p.re)?;
        let d = tape.mul(g.im, p.im)?;
        let x = tape.add(c, d)?;
        let ang = tape.atan2(y, x)?;
        angles.push(tape.reshape(ang, &[shape.iter().product()])?);
    }
    let all = tape.concat(&angles, 0)?;
    let sq = tape.square(all);
    let m = tape.constant(mask);
    let masked = tape.mul(sq, m)?;
    let s = tape.sum(masked);
    Ok(tape.scale(s, 1.0 / l as f64))
}

/// Left/right spectrograms implied by a mono mixture and a difference: `(M ± D)/2`.
pub fn binaural_from_difference<T: Real>(tape: &mut Tape<T>, mono: Complex, diff: Complex) -> Result<[Complex; 2]> {
    let lr = tape.add(mono.re, diff.re)?;
    let li = tape.add(mono.im, diff.im)?;
    let rr = tape.sub(mono.re, diff.re)?;
    let ri = tape.sub(mono.im, diff.im)?;
    Ok([
        Complex::new(tape.scale(lr, 0.5), tape.scale(li, 0.5)),
        Complex::new(tape.scale(rr, 0.5), tape.scale(ri, 0.5)),
    ])
}

/// Individual reconstruction terms and their weighted sum.
#[derive(Debug, Clone, Copy)]
pub struct Reconstruction {
    pub mse: Var,
    pub apm: Var,
    pub phs: Var,
    pub rec: Var,
}

/// `mse + ζ·apm + η·phs` on already-computed terms.
pub fn loss_rec<T: Real>(tape: &mut Tape<T>, mse: Var, apm: Var, phs: Var, cfg: &LossConfig) -> Result<Var> {
    let a = tape.scale(apm, cfg.zeta);
    let p = tape.scale(phs, cfg.eta);
    let r = tape.add(mse, a)?;
    tape.add(r, p)
}

/// All reconstruction terms for a predicted difference spectrogram.
pub fn reconstruction<T: Real>(
    tape: &mut Tape<T>,
    cfg: &LossConfig,
    mono: Complex,
    gt_diff: Complex,
    pred_diff: Complex,
    gt_binaural: [Complex; 2],
) -> Result<Reconstruction> {
    let mse = loss_mse(tape, gt_diff, pred_diff)?;
    let apm = loss_apm(tape, gt_diff, pred_diff)?;
    let pred_binaural = binaural_from_difference(tape, mono, pred_diff)?;
    let phs = loss_phs(tape, &gt_binaural, &pred_binaural, cfg.phase_threshold)?;
    let rec = loss_rec(tape, mse, apm, phs, cfg)?;
    Ok(Reconstruction { mse, apm, phs, rec })
}

/// Unit-norm embeddings `[N, C]` for anchors, positives and negatives.
#[derive(Debug, Clone, Copy)]
pub struct ContrastiveBatch {
    pub anchors: Var,
    pub positives: Var,
    pub negatives: Var,
}

/// Embeds anchor, positive and shuffled frames against the same audio
/// bottleneck. The three frame sets go through the image encoder together in
/// eval mode: running statistics are read, never updated, and every item is
/// encoded independently of the rest of the batch. Gradients flow through all
/// three sets.
pub fn build_contrastive_sets<T: Real>(
    tape: &mut Tape<T>,
    net: &Network,
    store: &mut ParamStore<T>,
    bottleneck: Var,
    anchor_frames: Var,
    positive_frames: Var,
    shuffled_frames: Var,
) -> Result<ContrastiveBatch> {
    let n = tape.shape(bottleneck)[0];
    if n < 2 {
        return Err(Error::invalid(format!("contrastive batch needs at least 2 items, got {n}")));
    }
    for f in [anchor_frames, positive_frames, shuffled_frames] {
        if tape.shape(f).first() != Some(&n) {
            return Err(Error::shape("build_contrastive_sets", format!("{:?} frames for {n} items", tape.shape(f))));
        }
    }
    let frames = tape.concat(&[anchor_frames, positive_frames, shuffled_frames], 0)?;
    let visual = net.encode_image(tape, store, frames, Mode::Eval)?;
    let audio = tape.concat(&[bottleneck, bottleneck, bottleneck], 0)?;
    let fused = net.fuse(tape, store, audio, visual)?.fused;
    let z = Network::embed(tape, fused)?;
    Ok(ContrastiveBatch {
        anchors: tape.slice(z, 0, 0, n)?,
        positives: tape.slice(z, 0, n, n)?,
        negatives: tape.slice(z, 0, 2 * n, n)?,
    })
}

/// InfoNCE: mean over anchors of `−log softmax([s⁺, s⁻_1 … s⁻_M] / τ)[0]`,
/// every anchor scored against every negative.
pub fn loss_scl<T: Real>(tape: &mut Tape<T>, cb: &ContrastiveBatch, tau: f64) -> Result<Var> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let (a, p, neg) = (
        tape.shape(cb.anchors).to_vec(),
        tape.shape(cb.positives).to_vec(),
        tape.shape(cb.negatives).to_vec(),
    );
    if a.len() != 2 || p != a || neg.len() != 2 || neg[1] != a[1] || neg[0] == 0 {
        return Err(Error::shape("loss_scl", format!("anchors {a:?}, positives {p:?}, negatives {neg:?}")));
    }
    let (n, c) = (a[0], a[1]);
    let za = tape.reshape(cb.anchors, &[n, 1, c])?;
    let zp = tape.reshape(cb.positives, &[n, c, 1])?;
    let pos = tape.matmul(za, zp)?;
    let pos = tape.reshape(pos, &[n, 1])?;
    let zn = tape.permute(cb.negatives, &[1, 0])?;
    let negs = tape.matmul(cb.anchors, zn)?; // [N, M]
    let logits = tape.concat(&[pos, negs], 1)?;
    let logits = tape.scale(logits, 1.0 / tau);
    let prob = tape.softmax(logits, 1)?;
    let first = tape.slice(prob, 1, 0, 1)?;
    let lp = tape.log(first);
    let m = tape.mean(lp);
    Ok(tape.scale(m, -1.0))
}

/// `rec + λ·scl`.
pub fn total_loss<T: Real>(tape: &mut Tape<T>, rec: Var, scl: Var, lambda: f64) -> Result<Var> {
    let s = tape.scale(scl, lambda);
    tape.add(rec, s)
}
