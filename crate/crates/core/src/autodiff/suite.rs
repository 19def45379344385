//! Finite-difference checks for every tape primitive over several shapes.

use rand::Rng;

use crate::autodiff::rng::{seeded_rng, Rng as ChaRng};
use crate::autodiff::{
    grad_check, BatchNormSpec, Conv2dSpec, GradCheckReport, Mode, RunningStats, Tape, Tensor, Var,
};
use crate::error::Result;

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-3;

fn uniform(rng: &mut ChaRng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).expect("shape matches")
}

/// Values with magnitude in `[0.1, 1)` and random sign, away from kinks at 0.
fn off_zero(rng: &mut ChaRng, shape: &[usize]) -> Tensor<f64> {
    let mut t = uniform(rng, shape, 0.1, 1.0);
    for v in t.data_mut() {
        if rng.gen_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// Reduces `y` to a scalar through a fixed random weighting so every output element matters.
pub fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = seeded_rng(seed ^ 0x5eed);
    let w = uniform(&mut rng, tape.shape(y), -1.0, 1.0);
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

const SHAPES: [&[usize]; 5] = [&[1], &[7], &[3, 4], &[2, 3, 5], &[2, 2, 3, 3]];

fn unary_suite(
    out: &mut Vec<GradCheckReport>,
    rng: &mut ChaRng,
    name: &str,
    positive: bool,
    op: fn(&mut Tape<f64>, Var) -> Result<Var>,
) {
    for (i, shape) in SHAPES.iter().enumerate() {
        let x = if positive {
            uniform(rng, shape, 0.2, 2.0)
        } else {
            off_zero(rng, shape)
        };
        let seed = i as u64;
        out.push(grad_check(
            &format!("{name} {shape:?}"),
            |t, v| {
                let y = op(t, v[0])?;
                weighted_sum(t, y, seed)
            },
            &[x],
            STEP,
            TOLERANCE,
        ));
    }
}

fn binary_suite(
    out: &mut Vec<GradCheckReport>,
    rng: &mut ChaRng,
    name: &str,
    op: fn(&mut Tape<f64>, Var, Var) -> Result<Var>,
) {
    for (i, shape) in SHAPES.iter().enumerate() {
        let a = off_zero(rng, shape);
        let b = off_zero(rng, shape);
        let seed = i as u64;
        out.push(grad_check(
            &format!("{name} {shape:?}"),
            |t, v| {
                let y = op(t, v[0], v[1])?;
                weighted_sum(t, y, seed)
            },
            &[a, b],
            STEP,
            TOLERANCE,
        ));
    }
}

fn single(
    out: &mut Vec<GradCheckReport>,
    label: String,
    inputs: Vec<Tensor<f64>>,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) {
    out.push(grad_check(&label, f, &inputs, STEP, TOLERANCE));
}

/// Runs the full primitive suite; every entry should pass at [`TOLERANCE`].
pub fn primitive_suite(seed: u64) -> Vec<GradCheckReport> {
    let mut rng = seeded_rng(seed);
    let rng = &mut rng;
    let mut out = Vec::new();

    binary_suite(&mut out, rng, "add", |t, a, b| t.add(a, b));
    binary_suite(&mut out, rng, "sub", |t, a, b| t.sub(a, b));
    binary_suite(&mut out, rng, "mul", |t, a, b| t.mul(a, b));
    binary_suite(&mut out, rng, "hypot", |t, a, b| t.hypot(a, b));
    binary_suite(&mut out, rng, "atan2", |t, a, b| t.atan2(a, b));

    unary_suite(&mut out, rng, "scale", false, |t, x| Ok(t.scale(x, -1.7)));
    unary_suite(&mut out, rng, "leaky_relu", false, |t, x| Ok(t.leaky_relu(x, 0.2)));
    unary_suite(&mut out, rng, "relu", false, |t, x| Ok(t.relu(x)));
    unary_suite(&mut out, rng, "sigmoid", false, |t, x| Ok(t.sigmoid(x)));
    unary_suite(&mut out, rng, "tanh", false, |t, x| Ok(t.tanh(x)));
    unary_suite(&mut out, rng, "exp", false, |t, x| Ok(t.exp(x)));
    unary_suite(&mut out, rng, "log", true, |t, x| Ok(t.log(x)));
    unary_suite(&mut out, rng, "abs", false, |t, x| Ok(t.abs(x)));
    unary_suite(&mut out, rng, "square", false, |t, x| Ok(t.square(x)));
    unary_suite(&mut out, rng, "sqrt", true, |t, x| Ok(t.sqrt(x)));
    unary_suite(&mut out, rng, "sum", false, |t, x| {
        let s = t.sum(x);
        Ok(t.square(s))
    });
    unary_suite(&mut out, rng, "mean", false, |t, x| {
        let s = t.mean(x);
        Ok(t.exp(s))
    });

    // softmax / l2_normalize along every axis of a few shapes
    for (i, (shape, axis)) in [
        (&[5][..], 0),
        (&[3, 4][..], 1),
        (&[3, 4][..], 0),
        (&[2, 3, 4][..], 1),
        (&[2, 3, 4][..], 2),
    ]
    .into_iter()
    .enumerate()
    {
        let x = uniform(rng, shape, -2.0, 2.0);
        single(&mut out, format!("softmax {shape:?} axis {axis}"), vec![x.clone()], |t, v| {
            let y = t.softmax(v[0], axis)?;
            weighted_sum(t, y, i as u64)
        });
        single(&mut out, format!("softmax+log {shape:?} axis {axis}"), vec![x.clone()], |t, v| {
            let y = t.softmax(v[0], axis)?;
            let y = t.log(y);
            weighted_sum(t, y, i as u64)
        });
        single(&mut out, format!("l2_normalize {shape:?} axis {axis}"), vec![x], |t, v| {
            let y = t.l2_normalize(v[0], axis, 1e-12)?;
            weighted_sum(t, y, i as u64)
        });
    }

    for (i, (a, b)) in [
        (&[1, 1][..], &[1, 1][..]),
        (&[2, 3][..], &[3, 4][..]),
        (&[5, 2][..], &[2, 5][..]),
        (&[2, 3, 4][..], &[2, 4, 2][..]),
        (&[3, 1, 5][..], &[3, 5, 3][..]),
    ]
    .into_iter()
    .enumerate()
    {
        let (x, y) = (uniform(rng, a, -1.0, 1.0), uniform(rng, b, -1.0, 1.0));
        single(&mut out, format!("matmul {a:?}x{b:?}"), vec![x, y], |t, v| {
            let z = t.matmul(v[0], v[1])?;
            weighted_sum(t, z, i as u64)
        });
    }

    // (input, weight, stride, pad, bias)
    let conv_cases: [(&[usize], &[usize], usize, usize, bool); 6] = [
        (&[1, 1, 4, 4], &[1, 1, 3, 3], 1, 1, true),
        (&[2, 3, 5, 6], &[4, 3, 3, 3], 2, 1, true),
        (&[1, 2, 7, 5], &[3, 2, 3, 3], 2, 0, false),
        (&[2, 4, 3, 3], &[2, 4, 1, 1], 1, 0, true),
        (&[1, 2, 6, 8], &[2, 2, 3, 3], 1, 0, true),
        (&[3, 1, 4, 4], &[2, 1, 2, 2], 2, 0, true),
    ];
    for (i, &(xs, ws, stride, pad, bias)) in conv_cases.iter().enumerate() {
        let x = uniform(rng, xs, -1.0, 1.0);
        let w = uniform(rng, ws, -1.0, 1.0);
        let mut inputs = vec![x, w];
        if bias {
            inputs.push(uniform(rng, &[ws[0]], -1.0, 1.0));
        }
        let spec = Conv2dSpec::new(stride, pad);
        single(&mut out, format!("conv2d {xs:?} w{ws:?} s{stride} p{pad}"), inputs, |t, v| {
            let y = t.conv2d(v[0], v[1], v.get(2).copied(), spec)?;
            weighted_sum(t, y, i as u64)
        });
    }

    let convt_cases: [(&[usize], &[usize], usize, usize, bool); 5] = [
        (&[1, 1, 2, 2], &[1, 1, 3, 3], 1, 1, true),
        (&[2, 3, 3, 2], &[3, 2, 4, 4], 2, 1, true),
        (&[1, 2, 3, 3], &[2, 3, 3, 3], 2, 0, false),
        (&[2, 2, 2, 3], &[2, 2, 1, 1], 1, 0, true),
        (&[1, 4, 2, 2], &[4, 1, 2, 2], 2, 0, true),
    ];
    for (i, &(xs, ws, stride, pad, bias)) in convt_cases.iter().enumerate() {
        let x = uniform(rng, xs, -1.0, 1.0);
        let w = uniform(rng, ws, -1.0, 1.0);
        let mut inputs = vec![x, w];
        if bias {
            inputs.push(uniform(rng, &[ws[1]], -1.0, 1.0));
        }
        let spec = Conv2dSpec::new(stride, pad);
        single(
            &mut out,
            format!("conv_transpose2d {xs:?} w{ws:?} s{stride} p{pad}"),
            inputs,
            |t, v| {
                let y = t.conv_transpose2d(v[0], v[1], v.get(2).copied(), spec)?;
                weighted_sum(t, y, i as u64)
            },
        );
    }

    let bn_shapes: [&[usize]; 5] = [&[2, 4, 5, 5], &[3, 2], &[2, 3, 4], &[4, 1, 2, 2], &[2, 2, 3, 1]];
    for (i, shape) in bn_shapes.iter().enumerate() {
        let x = uniform(rng, shape, -2.0, 2.0);
        let c = shape[1];
        single(&mut out, format!("batchnorm2d train {shape:?}"), vec![x.clone()], |t, v| {
            let mut stats = RunningStats::new(c);
            let y = t.batchnorm2d(v[0], &mut stats, Mode::Train, BatchNormSpec::default())?;
            weighted_sum(t, y, i as u64)
        });
        let mut stats = RunningStats::new(c);
        for (k, (m, s)) in stats.mean.iter_mut().zip(stats.var.iter_mut()).enumerate() {
            *m = 0.1 * k as f64;
            *s = 0.5 + 0.3 * k as f64;
        }
        single(&mut out, format!("batchnorm2d eval {shape:?}"), vec![x.clone()], |t, v| {
            let mut stats = stats.clone();
            let y = t.batchnorm2d(v[0], &mut stats, Mode::Eval, BatchNormSpec::default())?;
            weighted_sum(t, y, i as u64)
        });
        let gamma = uniform(rng, &[c], 0.5, 1.5);
        let beta = uniform(rng, &[c], -0.5, 0.5);
        single(&mut out, format!("channel_affine {shape:?}"), vec![x, gamma, beta], |t, v| {
            let y = t.channel_affine(v[0], Some(v[1]), Some(v[2]))?;
            weighted_sum(t, y, i as u64)
        });
    }

    let pool_cases: [(&[usize], usize, usize); 5] = [
        (&[1, 1, 2, 2], 2, 2),
        (&[2, 3, 4, 6], 2, 2),
        (&[1, 2, 5, 5], 3, 1),
        (&[1, 1, 7, 4], 2, 1),
        (&[2, 1, 6, 6], 3, 3),
    ];
    for (i, &(xs, k, s)) in pool_cases.iter().enumerate() {
        let x = uniform(rng, xs, -1.0, 1.0);
        single(&mut out, format!("avgpool2d {xs:?} k{k} s{s}"), vec![x], |t, v| {
            let y = t.avgpool2d(v[0], k, s)?;
            weighted_sum(t, y, i as u64)
        });
    }

    let four_d: [&[usize]; 5] = [&[1, 1, 1, 1], &[1, 2, 2, 3], &[2, 1, 3, 2], &[2, 3, 2, 2], &[1, 4, 1, 5]];
    for (i, shape) in four_d.iter().enumerate() {
        let x = uniform(rng, shape, -1.0, 1.0);
        single(&mut out, format!("upsample_nearest2 {shape:?}"), vec![x.clone()], |t, v| {
            let y = t.upsample_nearest2(v[0])?;
            weighted_sum(t, y, i as u64)
        });
        let other = uniform(rng, shape, -1.0, 1.0);
        single(&mut out, format!("concat {shape:?} axis 1"), vec![x.clone(), other], |t, v| {
            let y = t.concat(&[v[0], v[1], v[0]], 1)?;
            weighted_sum(t, y, i as u64)
        });
        let axis = 3;
        let len = shape[axis].max(2) - 1;
        single(&mut out, format!("slice {shape:?} axis {axis}"), vec![x.clone()], |t, v| {
            let y = t.slice(v[0], axis, shape[axis] - len, len)?;
            weighted_sum(t, y, i as u64)
        });
        let flat: usize = shape.iter().product();
        single(&mut out, format!("reshape {shape:?}"), vec![x.clone()], |t, v| {
            let y = t.reshape(v[0], &[flat])?;
            let y = t.square(y);
            weighted_sum(t, y, i as u64)
        });
        single(&mut out, format!("permute {shape:?}"), vec![x.clone()], |t, v| {
            let y = t.permute(v[0], &[2, 0, 3, 1])?;
            let y = t.square(y);
            weighted_sum(t, y, i as u64)
        });
        single(&mut out, format!("tile_batch {shape:?}"), vec![x], |t, v| {
            let y = t.tile_batch(v[0], 3)?;
            weighted_sum(t, y, i as u64)
        });
    }
    out
}
