use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamGroup, ParamStore, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    /// Learning rate of the image encoder.
    pub lr_image: f64,
    /// Learning rate of everything else (audio U-Net, attention, de-normalization).
    pub lr_audio: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr_image: 5e-5,
            lr_audio: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn lr(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Image => self.lr_image,
            ParamGroup::Audio => self.lr_audio,
        }
    }
}

/// Adam with bias correction and per-group learning rates.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = || {
            store
                .params()
                .iter()
                .map(|p| vec![T::zero(); p.value.numel()])
                .collect()
        };
        Self {
            config,
            step: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }

    /// Applies one update to every parameter and clears the gradients.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if self.first_moment.len() != store.params().len() {
            return Err(Error::InvalidState(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first_moment.len(),
                store.params().len()
            )));
        }
        if let Some(p) = store.params().iter().find(|p| p.grad.is_none()) {
            return Err(Error::InvalidState(format!("parameter {} has no gradient", p.name)));
        }
        self.step += 1;
        let t = self.step as i32;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let eps = T::from_f64_lossy(c.eps);
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let grad = p.grad.take().expect("checked above");
            let step_size = T::from_f64_lossy(c.lr(p.group) / bc1);
            let inv_bc2 = T::from_f64_lossy(1.0 / bc2);
            let (m, v) = (&mut self.first_moment[i], &mut self.second_moment[i]);
            for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(&grad).zip(m).zip(v) {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *w -= step_size * *m / ((*v * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
