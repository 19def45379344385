//! The complete gradient verification run: tape primitives, every loss term,
//! and the full training objective of the miniature network.

use rand::Rng;

use crate::autodiff::suite::{primitive_suite, STEP, TOLERANCE};
use crate::autodiff::{grad_check, grad_check_params, seeded_rng, GradCheckReport, Mode, Tape, Tensor, Var};
use crate::error::Result;
use crate::losses::{
    binaural_from_difference, build_contrastive_sets, loss_apm, loss_mse, loss_phs, loss_scl, reconstruction,
    total_loss, Complex, ContrastiveBatch, LossConfig,
};
use crate::model::{ModelConfig, Network};

/// Finite-difference step of the full-model check. The miniature network
/// still has thousands of ReLU-type kinks, which a 1e-4 step often straddles.
pub const FULL_MODEL_STEP: f64 = 1e-6;
pub const FULL_MODEL_TOLERANCE: f64 = 3e-3;

/// Loss inputs are `[N, 2, F, T]` planes; five shapes per term.
const LOSS_SHAPES: [[usize; 4]; 5] = [[1, 2, 1, 1], [1, 2, 3, 4], [2, 2, 3, 4], [2, 2, 5, 2], [3, 2, 4, 3]];

fn random(seed: u64, shape: &[usize], scale: f64) -> Tensor<f64> {
    let mut rng = seeded_rng(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).expect("shape matches")
}

fn planes(t: &mut Tape<f64>, x: Var) -> Result<Complex> {
    Complex::from_planes(t, x)
}

/// Gradient checks of MSE, APM, PHS, the weighted reconstruction and InfoNCE.
pub fn loss_suite(seed: u64) -> Vec<GradCheckReport> {
    let mut out = Vec::new();
    for (i, shape) in LOSS_SHAPES.iter().enumerate() {
        let s = seed.wrapping_mul(1000) + 10 * i as u64;
        let label = |name: &str| format!("{name} {shape:?}");
        let two = vec![random(s, shape, 1.0), random(s + 1, shape, 1.0)];
        out.push(grad_check(
            &label("loss_mse"),
            |t, v| {
                let (g, p) = (planes(t, v[0])?, planes(t, v[1])?);
                loss_mse(t, g, p)
            },
            &two,
            STEP,
            TOLERANCE,
        ));
        out.push(grad_check(
            &label("loss_apm"),
            |t, v| {
                let (g, p) = (planes(t, v[0])?, planes(t, v[1])?);
                loss_apm(t, g, p)
            },
            &two,
            STEP,
            TOLERANCE,
        ));
        out.push(grad_check(
            &label("loss_phs"),
            |t, v| {
                let (g, p) = (planes(t, v[0])?, planes(t, v[1])?);
                loss_phs(t, &[g], &[p], 1e-3)
            },
            &two,
            STEP,
            TOLERANCE,
        ));
        let three = vec![random(s + 2, shape, 1.0), random(s + 3, shape, 1.0), random(s + 4, shape, 1.0)];
        out.push(grad_check(
            &label("loss_rec"),
            |t, v| {
                let (m, g, p) = (planes(t, v[0])?, planes(t, v[1])?, planes(t, v[2])?);
                let gb = binaural_from_difference(t, m, g)?;
                Ok(reconstruction(t, &LossConfig::default(), m, g, p, gb)?.rec)
            },
            &three,
            STEP,
            TOLERANCE,
        ));
        let rows = shape[0] + 1;
        let z = vec![
            random(s + 5, &[rows, 4], 1.0),
            random(s + 6, &[rows, 4], 1.0),
            random(s + 7, &[rows, 4], 1.0),
        ];
        out.push(grad_check(
            &format!("loss_scl [{rows}, 4]"),
            |t, v| {
                let cb = ContrastiveBatch {
                    anchors: t.l2_normalize(v[0], 1, 1e-12)?,
                    positives: t.l2_normalize(v[1], 1, 1e-12)?,
                    negatives: t.l2_normalize(v[2], 1, 1e-12)?,
                };
                loss_scl(t, &cb, 0.1)
            },
            &z,
            STEP,
            TOLERANCE,
        ));
    }
    out
}

/// Checks the gradient of `ℓ_REC + λ·ℓ_SCL` with respect to every parameter
/// of the miniature network, modulation heads set away from zero.
pub fn full_model_check(seed: u64) -> GradCheckReport {
    let cfg = ModelConfig::miniature();
    let (net, mut store) = match Network::build::<f64>(&cfg, seed) {
        Ok(built) => built,
        Err(e) => {
            return GradCheckReport {
                label: "full_model".into(),
                max_rel_error: Vec::new(),
                tol: FULL_MODEL_TOLERANCE,
                passed: false,
                failure: Some(e.to_string()),
            }
        }
    };
    let mut rng = seeded_rng(seed + 1);
    for p in store.params_mut() {
        if p.name.contains(".alpha.") || p.name.contains(".beta.") {
            for v in p.value.data_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
    }
    let (h, w) = (cfg.image_height, cfg.image_width);
    let spec = [2, 2, cfg.freq_bins, cfg.frames];
    let mono = random(seed + 2, &spec, 1.0);
    let gt_diff = random(seed + 3, &spec, 0.5);
    let frames: Vec<Tensor<f64>> = (0..3).map(|k| random(seed + 4 + k, &[2, 3, h, w], 2.0)).collect();
    let loss_cfg = LossConfig::default();
    let snapshot = store.buffers().to_vec();
    grad_check_params(
        "full_model",
        &mut store,
        |t, store| {
            // Train-mode passes update running statistics; every evaluation starts from the same ones.
            for (dst, src) in store.buffers_mut().iter_mut().zip(&snapshot) {
                dst.1 = src.1.clone();
            }
            let m = t.constant(mono.clone());
            let f: Vec<Var> = frames.iter().map(|x| t.constant(x.clone())).collect();
            let (ua, _) = net.encode_audio(t, store, m, Mode::Train)?;
            let cb = build_contrastive_sets(t, &net, store, ua, f[0], f[1], f[2])?;
            let out = net.forward(t, store, m, f[0], Mode::Train)?;
            let mono_c = planes(t, m)?;
            let g = t.constant(gt_diff.clone());
            let gt = planes(t, g)?;
            let gb = binaural_from_difference(t, mono_c, gt)?;
            let rec = reconstruction(t, &loss_cfg, mono_c, gt, Complex::new(out.pred_re, out.pred_im), gb)?;
            let scl = loss_scl(t, &cb, loss_cfg.tau)?;
            total_loss(t, rec.rec, scl, loss_cfg.lambda)
        },
        FULL_MODEL_STEP,
        FULL_MODEL_TOLERANCE,
        None,
    )
}

/// Primitives, losses and the full model, in that order.
pub fn gradient_suite(seed: u64) -> Vec<GradCheckReport> {
    let mut out = primitive_suite(seed);
    out.extend(loss_suite(seed));
    out.push(full_model_check(seed + 21));
    out
}
