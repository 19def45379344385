//! Tape-based reverse-mode differentiation.
//!
//! Every primitive appends a node to the tape holding its output value and
//! the handles of its inputs. Because nodes are only ever appended, tape
//! order is a topological order and `backward` is a single reverse sweep.

use crate::autodiff::float::matmul_into;
use crate::autodiff::tensor::{axis_split, numel};
use crate::autodiff::{ParamId, ParamStore, Real, RunningStats, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch-norm behaviour: batch statistics (and running-stat updates) or frozen statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dSpec {
    pub const fn new(stride: usize, pad: usize) -> Self {
        Self { stride, pad }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BatchNormSpec {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormSpec {
    fn default() -> Self {
        Self {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: Conv2dSpec,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: Conv2dSpec,
    },
    /// Output holds `x̂`; `inv_std` is per channel.
    BatchNormTrain { x: Var, inv_std: Vec<T> },
    BatchNormEval { x: Var, inv_std: Vec<T> },
    ChannelAffine {
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
    },
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Square(Var),
    Sqrt(Var),
    Softmax(Var, usize),
    Mean(Var),
    Sum(Var),
    AvgPool2d {
        x: Var,
        kernel: usize,
        stride: usize,
    },
    Upsample2(Var),
    Concat(Vec<Var>, usize),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    L2Normalize {
        x: Var,
        axis: usize,
        norms: Vec<T>,
        eps: T,
    },
    TileBatch(Var),
    Hypot(Var, Var),
    Atan2(Var, Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
    /// Accumulated gradient; only leaves keep one across `backward` calls.
    grad: Option<Vec<T>>,
}

/// Records a computation for reverse-mode differentiation.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    inference: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            inference: false,
        }
    }

    /// A tape on which parameters are recorded as constants; nothing is differentiable.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            inference: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: requires_grad && !self.inference,
            param: None,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let v = self.leaf(store.get(id).value.clone(), true);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated on a leaf by previous `backward` calls.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub(crate) fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.nodes
            .iter()
            .filter_map(|n| Some((n.param?, n.grad.as_deref()?)))
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    // ---------------------------------------------------------------- elementwise

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(va.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip(a, b, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::from_f64_lossy(c);
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::from_f64_lossy(slope);
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { v * s });
        self.push(out, Op::LeakyRelu(x, s), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        self.push(out, Op::Tanh(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.exp());
        self.push(out, Op::Exp(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.ln());
        self.push(out, Op::Log(x), &[x])
    }

    /// `|x|` with subgradient 0 at the origin.
    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.abs());
        self.push(out, Op::Abs(x), &[x])
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        self.push(out, Op::Square(x), &[x])
    }

    /// `√x` with gradient 0 where the output is 0.
    pub fn sqrt(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.sqrt());
        self.push(out, Op::Sqrt(x), &[x])
    }

    /// Element-wise `√(a² + b²)`; gradient defined as 0 at the origin.
    pub fn hypot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hypot", a, b)?;
        let out = self.zip(a, b, |x, y| (x * x + y * y).sqrt());
        Ok(self.push(out, Op::Hypot(a, b), &[a, b]))
    }

    /// Element-wise principal angle `atan2(y, x)` in `(-π, π]`; gradient 0 at the origin.
    pub fn atan2(&mut self, y: Var, x: Var) -> Result<Var> {
        self.same_shape("atan2", y, x)?;
        let out = self.zip(y, x, |a, b| a.atan2(b));
        Ok(self.push(out, Op::Atan2(y, x), &[y, x]))
    }

    // ---------------------------------------------------------------- reductions

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s: T = v.data().iter().copied().sum();
        let m = s / T::from_usize(v.numel().max(1)).unwrap();
        self.push(Tensor::scalar(m), Op::Mean(x), &[x])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("softmax", format!("axis {axis} for {shape:?}")));
        }
        let (outer, dim, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |d: usize| (o * dim + d) * inner + i;
                let mut mx = T::neg_infinity();
                for d in 0..dim {
                    mx = mx.max(src[at(d)]);
                }
                let mut total = T::zero();
                for d in 0..dim {
                    let e = (src[at(d)] - mx).exp();
                    out[at(d)] = e;
                    total += e;
                }
                for d in 0..dim {
                    out[at(d)] /= total;
                }
            }
        }
        let out = Tensor::from_vec(&shape, out)?;
        Ok(self.push(out, Op::Softmax(x, axis), &[x]))
    }

    /// `x / max(‖x‖₂, eps)` along `axis`.
    pub fn l2_normalize(&mut self, x: Var, axis: usize, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(
                "l2_normalize",
                format!("axis {axis} for {shape:?}"),
            ));
        }
        let eps = T::from_f64_lossy(eps);
        let (outer, dim, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        let mut norms = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |d: usize| (o * dim + d) * inner + i;
                let n = (0..dim).map(|d| src[at(d)] * src[at(d)]).sum::<T>().sqrt();
                norms[o * inner + i] = n;
                let denom = n.max(eps);
                for d in 0..dim {
                    out[at(d)] = src[at(d)] / denom;
                }
            }
        }
        let out = Tensor::from_vec(&shape, out)?;
        Ok(self.push(out, Op::L2Normalize { x, axis, norms, eps }, &[x]))
    }

    // ---------------------------------------------------------------- linear algebra

    /// `[m,k]·[k,n]` or batched `[b,m,k]·[b,k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (batch, m, k, n) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n),
            ([b1, m, k], [b2, k2, n]) if b1 == b2 && k == k2 => (*b1, *m, *k, *n),
            _ => return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}"))),
        };
        let mut out = vec![T::zero(); batch * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            matmul_into(
                m,
                k,
                n,
                &da[i * m * k..],
                false,
                &db[i * k * n..],
                false,
                &mut out[i * m * n..],
                false,
            );
        }
        let shape = if sa.len() == 2 { vec![m, n] } else { vec![batch, m, n] };
        let out = Tensor::from_vec(&shape, out)?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let g = ConvGeom::forward(self.shape(x), self.shape(w), spec)?;
        if let Some(b) = b {
            if self.shape(b) != [g.co] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias {:?} for {} output channels", self.shape(b), g.co),
                ));
            }
        }
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![T::zero(); g.n * g.co * g.p_out()];
        let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { g.k() * g.p_out() }];
        for s in 0..g.n {
            let xs = &xd[s * g.ci * g.p_in()..(s + 1) * g.ci * g.p_in()];
            let src: &[T] = if g.is_pointwise() {
                xs
            } else {
                im2col(xs, &g, &mut cols);
                &cols
            };
            matmul_into(
                g.co,
                g.k(),
                g.p_out(),
                wd,
                false,
                src,
                false,
                &mut out[s * g.co * g.p_out()..],
                false,
            );
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), g.co, g.p_out());
        }
        let out = Tensor::from_vec(&[g.n, g.co, g.ho, g.wo], out)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(out, Op::Conv2d { x, w, b, spec }, &inputs))
    }

    /// Transposed convolution; `w` is `[c_in, c_out, kh, kw]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: Conv2dSpec,
    ) -> Result<Var> {
        let g = ConvGeom::transpose(self.shape(x), self.shape(w), spec)?;
        if let Some(b) = b {
            if self.shape(b) != [g.ci] {
                return Err(Error::shape(
                    "conv_transpose2d",
                    format!("bias {:?} for {} output channels", self.shape(b), g.ci),
                ));
            }
        }
        // `g` describes the adjoint convolution: its input is our output.
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![T::zero(); g.n * g.ci * g.p_in()];
        let mut cols = vec![T::zero(); g.k() * g.p_out()];
        for s in 0..g.n {
            matmul_into(
                g.k(),
                g.co,
                g.p_out(),
                wd,
                true,
                &xd[s * g.co * g.p_out()..],
                false,
                &mut cols,
                false,
            );
            col2im(&cols, &g, &mut out[s * g.ci * g.p_in()..(s + 1) * g.ci * g.p_in()]);
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), g.ci, g.p_in());
        }
        let out = Tensor::from_vec(&[g.n, g.ci, g.h, g.w], out)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(out, Op::ConvTranspose2d { x, w, b, spec }, &inputs))
    }

    // ---------------------------------------------------------------- normalization

    /// Affine-free batch normalization over all axes except axis 1.
    ///
    /// In train mode the running statistics are updated with `spec.momentum`
    /// (unbiased variance); in eval mode they are used as-is.
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        stats: &mut RunningStats<T>,
        mode: Mode,
        spec: BatchNormSpec,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || stats.mean.len() != shape[1] {
            return Err(Error::shape(
                "batchnorm2d",
                format!("{shape:?} with {} channel statistics", stats.mean.len()),
            ));
        }
        let (n, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let count = n * inner;
        let eps = T::from_f64_lossy(spec.eps);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        let mut inv_std = vec![T::zero(); c];
        match mode {
            Mode::Train => {
                if count < 2 {
                    return Err(Error::shape(
                        "batchnorm2d",
                        format!("train mode needs >= 2 values per channel, got {shape:?}"),
                    ));
                }
                let m = T::from_f64_lossy(spec.momentum);
                let cnt = T::from_usize(count).unwrap();
                for ch in 0..c {
                    let slices = (0..n).map(|s| &src[(s * c + ch) * inner..(s * c + ch + 1) * inner]);
                    let mean = slices.clone().flatten().copied().sum::<T>() / cnt;
                    let var = slices
                        .flatten()
                        .map(|&v| (v - mean) * (v - mean))
                        .sum::<T>()
                        / cnt;
                    let is = T::one() / (var + eps).sqrt();
                    inv_std[ch] = is;
                    for s in 0..n {
                        let base = (s * c + ch) * inner;
                        for i in 0..inner {
                            out[base + i] = (src[base + i] - mean) * is;
                        }
                    }
                    let unbiased = var * cnt / (cnt - T::one());
                    stats.mean[ch] = (T::one() - m) * stats.mean[ch] + m * mean;
                    stats.var[ch] = (T::one() - m) * stats.var[ch] + m * unbiased;
                }
                let out = Tensor::from_vec(&shape, out)?;
                Ok(self.push(out, Op::BatchNormTrain { x, inv_std }, &[x]))
            }
            Mode::Eval => {
                for ch in 0..c {
                    let is = T::one() / (stats.var[ch] + eps).sqrt();
                    inv_std[ch] = is;
                    let mean = stats.mean[ch];
                    for s in 0..n {
                        let base = (s * c + ch) * inner;
                        for i in 0..inner {
                            out[base + i] = (src[base + i] - mean) * is;
                        }
                    }
                }
                let out = Tensor::from_vec(&shape, out)?;
                Ok(self.push(out, Op::BatchNormEval { x, inv_std }, &[x]))
            }
        }
    }

    /// Per-channel `gamma ⊙ x + beta` for `x` of shape `[N, C, ...]`.
    pub fn channel_affine(&mut self, x: Var, gamma: Option<Var>, beta: Option<Var>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape("channel_affine", format!("{shape:?}")));
        }
        let c = shape[1];
        for p in [gamma, beta].into_iter().flatten() {
            if self.shape(p) != [c] {
                return Err(Error::shape(
                    "channel_affine",
                    format!("parameter {:?} for {c} channels", self.shape(p)),
                ));
            }
        }
        let inner: usize = shape[2..].iter().product();
        let mut out = self.value(x).data().to_vec();
        for (idx, v) in out.iter_mut().enumerate() {
            let ch = (idx / inner) % c;
            if let Some(g) = gamma {
                *v *= self.value(g).data()[ch];
            }
            if let Some(b) = beta {
                *v += self.value(b).data()[ch];
            }
        }
        let out = Tensor::from_vec(&shape, out)?;
        let inputs: Vec<Var> = [Some(x), gamma, beta].into_iter().flatten().collect();
        Ok(self.push(out, Op::ChannelAffine { x, gamma, beta }, &inputs))
    }

    // ---------------------------------------------------------------- pooling & resampling

    pub fn avgpool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let [n, c, h, w] = shape[..] else {
            return Err(Error::shape("avgpool2d", format!("expected 4-d, got {shape:?}")));
        };
        if kernel == 0 || stride == 0 || kernel > h || kernel > w {
            return Err(Error::shape(
                "avgpool2d",
                format!("kernel {kernel} stride {stride} on {shape:?}"),
            ));
        }
        let (ho, wo) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
        let src = self.value(x).data();
        let norm = T::one() / T::from_usize(kernel * kernel).unwrap();
        let mut out = vec![T::zero(); n * c * ho * wo];
        for p in 0..n * c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = T::zero();
                    for ky in 0..kernel {
                        let row = &src[p * h * w + (oy * stride + ky) * w + ox * stride..];
                        for &v in &row[..kernel] {
                            acc += v;
                        }
                    }
                    out[(p * ho + oy) * wo + ox] = acc * norm;
                }
            }
        }
        let out = Tensor::from_vec(&[n, c, ho, wo], out)?;
        Ok(self.push(out, Op::AvgPool2d { x, kernel, stride }, &[x]))
    }

    /// Nearest-neighbour ×2 upsampling of the last two axes of a 4-d tensor.
    pub fn upsample_nearest2(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let [n, c, h, w] = shape[..] else {
            return Err(Error::shape("upsample_nearest2", format!("expected 4-d, got {shape:?}")));
        };
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * c * 4 * h * w];
        for p in 0..n * c {
            for y in 0..2 * h {
                let srow = &src[p * h * w + (y / 2) * w..][..w];
                let drow = &mut out[(p * 2 * h + y) * 2 * w..][..2 * w];
                for (xo, d) in drow.iter_mut().enumerate() {
                    *d = srow[xo / 2];
                }
            }
        }
        let out = Tensor::from_vec(&[n, c, 2 * h, 2 * w], out)?;
        Ok(self.push(out, Op::Upsample2(x), &[x]))
    }

    // ---------------------------------------------------------------- shape manipulation

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .nodes
            .get(xs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?.0)
            .unwrap()
            .value
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} for {first:?}")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{first:?} vs {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &v in xs {
                let d = self.shape(v)[axis];
                out.extend_from_slice(&self.value(v).data()[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let out = Tensor::from_vec(&shape, out)?;
        Ok(self.push(out, Op::Concat(xs.to_vec(), axis), xs))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape(
                "slice",
                format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, dim, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * dim + start) * inner..(o * dim + start + len) * inner]);
        }
        let mut oshape = shape.clone();
        oshape[axis] = len;
        let out = Tensor::from_vec(&oshape, out)?;
        Ok(self.push(out, Op::Slice { x, axis, start }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        let valid = perm.len() == shape.len()
            && perm.iter().all(|&p| p < shape.len() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(Error::shape("permute", format!("{perm:?} for {shape:?}")));
        }
        let out = permute_data(self.value(x).data(), &shape, perm);
        let oshape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let out = Tensor::from_vec(&oshape, out)?;
        Ok(self.push(out, Op::Permute(x, perm.to_vec()), &[x]))
    }

    /// Repeats `x` along a new leading axis of length `n`.
    pub fn tile_batch(&mut self, x: Var, n: usize) -> Result<Var> {
        if n == 0 {
            return Err(Error::shape("tile_batch", "zero copies"));
        }
        let v = self.value(x);
        let mut shape = vec![n];
        shape.extend_from_slice(v.shape());
        let data = v.data().repeat(n);
        let out = Tensor::from_vec(&shape, data)?;
        Ok(self.push(out, Op::TileBatch(x), &[x]))
    }

    // ---------------------------------------------------------------- backward

    /// Accumulates `∂loss/∂leaf` into every leaf that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaf_updates = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaf_updates.push((i, g));
                continue;
            }
            self.backprop(i, &g, &mut grads)?;
        }
        for (i, g) in leaf_updates {
            match &mut self.nodes[i].grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &v)| *a += v),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn backprop(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => unreachable!(),
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = slot(&self.nodes, grads, v) {
                        d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = slot(&self.nodes, grads, *a) {
                    d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
                }
                if let Some(d) = slot(&self.nodes, grads, *b) {
                    d.iter_mut().zip(g).for_each(|(d, &g)| *d -= g);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).to_vec(), val(*b).to_vec());
                if let Some(d) = slot(&self.nodes, grads, *a) {
                    for ((d, &g), &y) in d.iter_mut().zip(g).zip(&vb) {
                        *d += g * y;
                    }
                }
                if let Some(d) = slot(&self.nodes, grads, *b) {
                    for ((d, &g), &x) in d.iter_mut().zip(g).zip(&va) {
                        *d += g * x;
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(d) = slot(&self.nodes, grads, *x) {
                    d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * *c);
                }
            }
            Op::LeakyRelu(x, s) => {
                let xv = val(*x);
                if let Some(d) = slot(&self.nodes, grads, *x) {
                    for ((d, &g), &x) in d.iter_mut().zip(g).zip(xv) {
                        *d += if x > T::zero() { g } else { g * *s };
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(d) = slot(&self.nodes, grads, *x) {
                    for ((d, &g), &y) in d.iter_mut().zip(g).zip(out) {
                        *d += g * y * (T::one() - y);
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(d) = slot(&self.nodes, grads, *x) {
                    for ((d, &g), &y) in d.iter_mut().zip(g).zip(out) {
                        *d += g * (T::one() - y * y);
                    }
                }
            }
            Op::Exp(x) => {
                if let Some(d) = slot(&self.nodes, grads, *x) {
                    for ((d, &g), &y) in d.iter_mut().zip(g).zip(out) {
                        *d += g * y;
                    }
                }
            }
            Op::Log(x) => {
                let xv = val(*x);
                if let Some(d) = slot(&self.nodes, grads, *x) {
                    for ((d, &g), &x) in d.iter_mut().zip(g).zip(xv) {
                        *d += g / x;
                    }
                }
            }
            Op::Abs(x) => {
                let xv = val(*x);
                if let Some(d) = slot(&self.nodes, grads, *x) {
                    for ((d, &g), &x) in d.iter_mut().zip(g).zip(xv) {
                        if x > T::zero() {
                            *d += g;
                        } else if x < T::zero() {
                            *d -= g;
                        }
                    }
                }
            }
            Op::Square(x) => {
                let xv = val(*x);
                if let Some(d) = slot(&self.nodes, grads, *x) {
                    let two = T::one() + T::one();
                    for ((d, &g), &x) in d.iter_mut().zip(g).zip(xv) {
                        *d += g * two * x;
                    }
                }
            }
            Op::Sqrt(x) => {
                if let Some(d) = slot(&self.nodes, grads, *x) {
                    let half = T::from_f64_lossy(0.5);
                    for ((d, &g), &y) in d.iter_mut().zip(g).zip(out) {
                        if y > T::zero() {
                            *d += g * half / y;
                        }
                    }
                }
            }
            Op::Hypot(a, b) => {
                let (va, vb) = (val(*a).to_vec(), val(*b).to_vec());
                for (v, num) in [(*a, &va), (*b, &vb)] {
                    if let Some(d) = slot(&self.nodes, grads, v) {
                        for (((d, &g), &r), &n) in d.iter_mut().zip(g).zip(out).zip(num) {
                            if r > T::zero() {
                                *d += g * n / r;
                            }
                        }
                    }
                }
            }
            Op::Atan2(y, x) => {
                let (vy, vx) = (val(*y).to_vec(), val(*x).to_vec());
                let r2: Vec<T> = vy.iter().zip(&vx).map(|(&a, &b)| a * a + b * b).collect();
                if let Some(d) = slot(&self.nodes, grads, *y) {
                    for (((d, &g), &x), &r) in d.iter_mut().zip(g).zip(&vx).zip(&r2) {
                        if r > T::zero() {
                            *d += g * x / r;
                        }
                    }
                }
                if let Some(d) = slot(&self.nodes, grads, *x) {
                    for (((d, &g), &y), &r) in d.iter_mut().zip(g).zip(&vy).zip(&r2) {
                        if r > T::zero() {
                            *d -= g * y / r;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(d) = slot(&self.nodes, grads, *x) {
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(d) = slot(&self.nodes, grads, *x) {
                    let share = g[0] / T::from_usize(d.len().max(1)).unwrap();
                    d.iter_mut().for_each(|d| *d += share);
                }
            }
            Op::Softmax(x, axis) => {
                let (outer, dim, inner) = axis_split(node.value.shape(), *axis);
                if let Some(d) = slot(&self.nodes, grads, *x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| (o * dim + k) * inner + i;
                            let dot: T = (0..dim).map(|k| g[at(k)] * out[at(k)]).sum();
                            for k in 0..dim {
                                d[at(k)] += out[at(k)] * (g[at(k)] - dot);
                            }
                        }
                    }
                }
            }
            Op::L2Normalize { x, axis, norms, eps } => {
                let (outer, dim, inner) = axis_split(node.value.shape(), *axis);
                if let Some(d) = slot(&self.nodes, grads, *x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| (o * dim + k) * inner + i;
                            let n = norms[o * inner + i];
                            if n > *eps {
                                let dot: T = (0..dim).map(|k| g[at(k)] * out[at(k)]).sum();
                                for k in 0..dim {
                                    d[at(k)] += (g[at(k)] - out[at(k)] * dot) / n;
                                }
                            } else {
                                for k in 0..dim {
                                    d[at(k)] += g[at(k)] / *eps;
                                }
                            }
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let sa = self.shape(*a).to_vec();
                let sb = self.shape(*b).to_vec();
                let batch = if sa.len() == 3 { sa[0] } else { 1 };
                let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let n = sb[sb.len() - 1];
                let bv = val(*b).to_vec();
                if let Some(d) = slot(&self.nodes, grads, *a) {
                    for s in 0..batch {
                        // dA = dC · Bᵀ
                        matmul_into(m, n, k, &g[s * m * n..], false, &bv[s * k * n..], true, &mut d[s * m * k..], true);
                    }
                }
                let av = val(*a).to_vec();
                if let Some(d) = slot(&self.nodes, grads, *b) {
                    for s in 0..batch {
                        // dB = Aᵀ · dC
                        matmul_into(k, m, n, &av[s * m * k..], true, &g[s * m * n..], false, &mut d[s * k * n..], true);
                    }
                }
            }
            Op::Conv2d { x, w, b, spec } => {
                let geom = ConvGeom::forward(self.shape(*x), self.shape(*w), *spec)?;
                self.conv_backward(&geom, g, *x, *w, *b, grads);
            }
            Op::ConvTranspose2d { x, w, b, spec } => {
                let geom = ConvGeom::transpose(self.shape(*x), self.shape(*w), *spec)?;
                self.conv_transpose_backward(&geom, g, *x, *w, *b, grads);
            }
            Op::BatchNormTrain { x, inv_std } => {
                let shape = node.value.shape();
                let (n, c) = (shape[0], shape[1]);
                let inner: usize = shape[2..].iter().product();
                let cnt = T::from_usize(n * inner).unwrap();
                if let Some(d) = slot(&self.nodes, grads, *x) {
                    for ch in 0..c {
                        let idx = (0..n).flat_map(|s| ((s * c + ch) * inner)..((s * c + ch + 1) * inner));
                        let sum_g: T = idx.clone().map(|j| g[j]).sum();
                        let sum_gx: T = idx.clone().map(|j| g[j] * out[j]).sum();
                        let k = inv_std[ch] / cnt;
                        for j in idx {
                            d[j] += k * (cnt * g[j] - sum_g - out[j] * sum_gx);
                        }
                    }
                }
            }
            Op::BatchNormEval { x, inv_std } => {
                let shape = node.value.shape();
                let c = shape[1];
                let inner: usize = shape[2..].iter().product();
                if let Some(d) = slot(&self.nodes, grads, *x) {
                    for (j, (d, &g)) in d.iter_mut().zip(g).enumerate() {
                        *d += g * inv_std[(j / inner) % c];
                    }
                }
            }
            Op::ChannelAffine { x, gamma, beta } => {
                let shape = node.value.shape();
                let c = shape[1];
                let inner: usize = shape[2..].iter().product();
                let ch = |j: usize| (j / inner) % c;
                let gv = gamma.map(|v| val(v).to_vec());
                if let Some(d) = slot(&self.nodes, grads, *x) {
                    for (j, (d, &g)) in d.iter_mut().zip(g).enumerate() {
                        *d += match &gv {
                            Some(gv) => g * gv[ch(j)],
                            None => g,
                        };
                    }
                }
                if let Some(gm) = gamma {
                    let xv = val(*x).to_vec();
                    if let Some(d) = slot(&self.nodes, grads, *gm) {
                        for (j, (&g, &x)) in g.iter().zip(&xv).enumerate() {
                            d[ch(j)] += g * x;
                        }
                    }
                }
                if let Some(bt) = beta {
                    if let Some(d) = slot(&self.nodes, grads, *bt) {
                        for (j, &g) in g.iter().enumerate() {
                            d[ch(j)] += g;
                        }
                    }
                }
            }
            Op::AvgPool2d { x, kernel, stride } => {
                let shape = self.shape(*x).to_vec();
                let (h, w) = (shape[2], shape[3]);
                let os = node.value.shape();
                let (ho, wo) = (os[2], os[3]);
                let norm = T::one() / T::from_usize(kernel * kernel).unwrap();
                if let Some(d) = slot(&self.nodes, grads, *x) {
                    for p in 0..shape[0] * shape[1] {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let gv = g[(p * ho + oy) * wo + ox] * norm;
                                for ky in 0..*kernel {
                                    let base = p * h * w + (oy * stride + ky) * w + ox * stride;
                                    for dv in &mut d[base..base + kernel] {
                                        *dv += gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Upsample2(x) => {
                let shape = self.shape(*x).to_vec();
                let (h, w) = (shape[2], shape[3]);
                if let Some(d) = slot(&self.nodes, grads, *x) {
                    for p in 0..shape[0] * shape[1] {
                        for y in 0..2 * h {
                            let grow = &g[(p * 2 * h + y) * 2 * w..][..2 * w];
                            let drow = &mut d[p * h * w + (y / 2) * w..][..w];
                            for (xo, &gv) in grow.iter().enumerate() {
                                drow[xo / 2] += gv;
                            }
                        }
                    }
                }
            }
            Op::Concat(xs, axis) => {
                let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in xs {
                    let dlen = self.shape(v)[*axis];
                    if let Some(d) = slot(&self.nodes, grads, v) {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + dlen) * inner];
                            let dst = &mut d[o * dlen * inner..(o + 1) * dlen * inner];
                            dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
                        }
                    }
                    offset += dlen;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, dim, inner) = axis_split(self.shape(*x), *axis);
                let len = node.value.shape()[*axis];
                if let Some(d) = slot(&self.nodes, grads, *x) {
                    for o in 0..outer {
                        let dst = &mut d[(o * dim + start) * inner..(o * dim + start + len) * inner];
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(d) = slot(&self.nodes, grads, *x) {
                    d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
                }
            }
            Op::Permute(x, perm) => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let back = permute_data(g, node.value.shape(), &inverse);
                if let Some(d) = slot(&self.nodes, grads, *x) {
                    d.iter_mut().zip(&back).for_each(|(d, &g)| *d += g);
                }
            }
            Op::TileBatch(x) => {
                if let Some(d) = slot(&self.nodes, grads, *x) {
                    let len = d.len();
                    for chunk in g.chunks(len) {
                        d.iter_mut().zip(chunk).for_each(|(d, &g)| *d += g);
                    }
                }
            }
        }
        Ok(())
    }

    fn conv_backward(
        &self,
        geom: &ConvGeom,
        g: &[T],
        x: Var,
        w: Var,
        b: Option<Var>,
        grads: &mut [Option<Vec<T>>],
    ) {
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let pointwise = geom.is_pointwise();
        let mut cols = vec![T::zero(); if pointwise { 0 } else { geom.k() * geom.p_out() }];
        let mut dcols = vec![T::zero(); geom.k() * geom.p_out()];
        let need_x = self.requires_grad(x);
        let need_w = self.requires_grad(w);
        let mut dw = need_w.then(|| vec![T::zero(); wd.len()]);
        let mut dx = need_x.then(|| vec![T::zero(); xd.len()]);
        for s in 0..geom.n {
            let gs = &g[s * geom.co * geom.p_out()..(s + 1) * geom.co * geom.p_out()];
            if let Some(dw) = dw.as_mut() {
                let xs = &xd[s * geom.ci * geom.p_in()..(s + 1) * geom.ci * geom.p_in()];
                let src: &[T] = if pointwise {
                    xs
                } else {
                    im2col(xs, geom, &mut cols);
                    &cols
                };
                matmul_into(geom.co, geom.p_out(), geom.k(), gs, false, src, true, dw, true);
            }
            if let Some(dx) = dx.as_mut() {
                let dxs = &mut dx[s * geom.ci * geom.p_in()..(s + 1) * geom.ci * geom.p_in()];
                if pointwise {
                    matmul_into(geom.k(), geom.co, geom.p_out(), wd, true, gs, false, dxs, true);
                } else {
                    matmul_into(geom.k(), geom.co, geom.p_out(), wd, true, gs, false, &mut dcols, false);
                    col2im(&dcols, geom, dxs);
                }
            }
        }
        accumulate(grads, x, dx);
        accumulate(grads, w, dw);
        if let Some(b) = b {
            if self.requires_grad(b) {
                accumulate(grads, b, Some(channel_sums(g, geom.n, geom.co, geom.p_out())));
            }
        }
    }

    fn conv_transpose_backward(
        &self,
        geom: &ConvGeom,
        g: &[T],
        x: Var,
        w: Var,
        b: Option<Var>,
        grads: &mut [Option<Vec<T>>],
    ) {
        // Forward was y = col2im(Wᵀ·x); here `geom` is the adjoint conv whose input is y.
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut cols = vec![T::zero(); geom.k() * geom.p_out()];
        let need_x = self.requires_grad(x);
        let need_w = self.requires_grad(w);
        let mut dw = need_w.then(|| vec![T::zero(); wd.len()]);
        let mut dx = need_x.then(|| vec![T::zero(); xd.len()]);
        for s in 0..geom.n {
            let gs = &g[s * geom.ci * geom.p_in()..(s + 1) * geom.ci * geom.p_in()];
            im2col(gs, geom, &mut cols);
            if let Some(dx) = dx.as_mut() {
                matmul_into(geom.co, geom.k(), geom.p_out(), wd, false, &cols, false, &mut dx[s * geom.co * geom.p_out()..], true);
            }
            if let Some(dw) = dw.as_mut() {
                let xs = &xd[s * geom.co * geom.p_out()..];
                matmul_into(geom.co, geom.p_out(), geom.k(), xs, false, &cols, true, dw, true);
            }
        }
        accumulate(grads, x, dx);
        accumulate(grads, w, dw);
        if let Some(b) = b {
            if self.requires_grad(b) {
                accumulate(grads, b, Some(channel_sums(g, geom.n, geom.ci, geom.p_in())));
            }
        }
    }
}

/// Lazily zero-initialised gradient buffer of an input, or `None` when it needs no grad.
fn slot<'a, T: Real>(nodes: &[Node<T>], grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut [T]> {
    let n = &nodes[v.0];
    if !n.requires_grad {
        return None;
    }
    Some(
        grads[v.0]
            .get_or_insert_with(|| vec![T::zero(); n.value.numel()])
            .as_mut_slice(),
    )
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, contribution: Option<Vec<T>>) {
    let Some(c) = contribution else { return };
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, &x)| *a += x),
        slot @ None => *slot = Some(c),
    }
}

fn channel_sums<T: Real>(g: &[T], n: usize, c: usize, inner: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c];
    for s in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            *o += g[(s * c + ch) * inner..(s * c + ch + 1) * inner]
                .iter()
                .copied()
                .sum::<T>();
        }
    }
    out
}

fn add_channel_bias<T: Real>(out: &mut [T], bias: &[T], c: usize, inner: usize) {
    for (j, chunk) in out.chunks_mut(inner).enumerate() {
        let b = bias[j % c];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

pub(crate) fn permute_data<T: Copy>(src: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let oshape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let ostrides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = src.len();
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return out;
    }
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..total {
        out.push(src[offset]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            offset += ostrides[d];
            if idx[d] < oshape[d] {
                break;
            }
            offset -= ostrides[d] * oshape[d];
            idx[d] = 0;
        }
    }
    out
}

/// Geometry of a 2-d convolution from `ci×h×w` to `co×ho×wo`.
#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn forward(x: &[usize], w: &[usize], spec: Conv2dSpec) -> Result<Self> {
        let ([n, ci, h, wd], [co, wci, kh, kw]) = (x, w) else {
            return Err(Error::shape("conv2d", format!("input {x:?}, weight {w:?}")));
        };
        if ci != wci || spec.stride == 0 || h + 2 * spec.pad < *kh || wd + 2 * spec.pad < *kw {
            return Err(Error::shape(
                "conv2d",
                format!("input {x:?}, weight {w:?}, stride {}, pad {}", spec.stride, spec.pad),
            ));
        }
        Ok(Self {
            n: *n,
            ci: *ci,
            h: *h,
            w: *wd,
            co: *co,
            kh: *kh,
            kw: *kw,
            ho: (h + 2 * spec.pad - kh) / spec.stride + 1,
            wo: (wd + 2 * spec.pad - kw) / spec.stride + 1,
            stride: spec.stride,
            pad: spec.pad,
        })
    }

    /// Adjoint geometry for a transposed conv: the conv maps (our output) → (our input).
    fn transpose(x: &[usize], w: &[usize], spec: Conv2dSpec) -> Result<Self> {
        let ([n, xc, h, wd], [wci, co, kh, kw]) = (x, w) else {
            return Err(Error::shape("conv_transpose2d", format!("input {x:?}, weight {w:?}")));
        };
        let ho = (h - 1) * spec.stride + kh;
        let wo = (wd - 1) * spec.stride + kw;
        if xc != wci || spec.stride == 0 || *h == 0 || *wd == 0 || ho <= 2 * spec.pad || wo <= 2 * spec.pad {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("input {x:?}, weight {w:?}, stride {}, pad {}", spec.stride, spec.pad),
            ));
        }
        Ok(Self {
            n: *n,
            ci: *co,
            h: ho - 2 * spec.pad,
            w: wo - 2 * spec.pad,
            co: *xc,
            kh: *kh,
            kw: *kw,
            ho: *h,
            wo: *wd,
            stride: spec.stride,
            pad: spec.pad,
        })
    }

    fn k(&self) -> usize {
        self.ci * self.kh * self.kw
    }

    fn p_in(&self) -> usize {
        self.h * self.w
    }

    fn p_out(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p_out = g.p_out();
    for c in 0..g.ci {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p_out..(row + 1) * p_out];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        drow.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let srow = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            srow[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back onto the input planes.
fn col2im<T: Real>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let p_out = g.p_out();
    for c in 0..g.ci {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p_out..(row + 1) * p_out];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let prow = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in src[oy * g.wo..(oy + 1) * g.wo].iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            prow[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}
