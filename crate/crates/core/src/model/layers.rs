//! Parameterized building blocks shared by the encoders and decoder.

use rand::Rng;

use crate::autodiff::rng::Rng as ChaRng;
use crate::autodiff::{
    BatchNormSpec, BufferId, Conv2dSpec, Mode, ParamGroup, ParamId, ParamStore, Real, RunningStats,
    Tape, Tensor, Var,
};
use crate::error::Result;

/// Uniform `U(−1/√fan_in, 1/√fan_in)` initialization.
pub(crate) fn fan_in_uniform<T: Real>(rng: &mut ChaRng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches")
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: Conv2dSpec,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaRng,
        name: &str,
        group: ParamGroup,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        spec: Conv2dSpec,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            fan_in_uniform(rng, &[c_out, c_in, kernel, kernel], fan_in),
            group,
        );
        let bias = Some(store.add(
            format!("{name}.bias"),
            fan_in_uniform(rng, &[c_out], fan_in),
            group,
        ));
        Self { weight, bias, spec }
    }

    /// A convolution without bias, for layers followed by batch normalization
    /// (which would cancel any per-channel constant).
    #[allow(clippy::too_many_arguments)]
    pub fn unbiased<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaRng,
        name: &str,
        group: ParamGroup,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        spec: Conv2dSpec,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            fan_in_uniform(rng, &[c_out, c_in, kernel, kernel], fan_in),
            group,
        );
        Self { weight, bias: None, spec }
    }

    /// A 1×1 convolution whose weight and bias start at exactly zero.
    pub fn zeroed<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        group: ParamGroup,
        c_in: usize,
        c_out: usize,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), Tensor::zeros(&[c_out, c_in, 1, 1]), group);
        let bias = Some(store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]), group));
        Self {
            weight,
            bias,
            spec: Conv2dSpec::new(1, 0),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.conv2d(x, w, b, self.spec)
    }
}

/// Batch normalization with optional learned per-channel scale and shift.
#[derive(Debug, Clone)]
pub struct Norm {
    pub stats: BufferId,
    pub gamma: Option<ParamId>,
    pub beta: Option<ParamId>,
}

impl Norm {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        group: ParamGroup,
        channels: usize,
        affine: bool,
    ) -> Self {
        let stats = store.add_buffer(format!("{name}.running"), RunningStats::new(channels));
        let (gamma, beta) = if affine {
            (
                Some(store.add(format!("{name}.gamma"), Tensor::full(&[channels], T::one()), group)),
                Some(store.add(format!("{name}.beta"), Tensor::zeros(&[channels]), group)),
            )
        } else {
            (None, None)
        };
        Self { stats, gamma, beta }
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let n = tape.batchnorm2d(x, store.buffer_mut(self.stats), mode, BatchNormSpec::default())?;
        if self.gamma.is_none() && self.beta.is_none() {
            return Ok(n);
        }
        let g = self.gamma.map(|g| tape.param(store, g));
        let b = self.beta.map(|b| tape.param(store, b));
        tape.channel_affine(n, g, b)
    }
}

/// Dense layer `x·W + b` on `[rows, in]` inputs.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaRng,
        name: &str,
        group: ParamGroup,
        d_in: usize,
        d_out: usize,
    ) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), fan_in_uniform(rng, &[d_in, d_out], d_in), group),
            bias: store.add(format!("{name}.bias"), fan_in_uniform(rng, &[d_out], d_in), group),
        }
    }
}
