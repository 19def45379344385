//! Multi-head cross-attention: audio positions query visual positions.

use crate::autodiff::rng::Rng as ChaRng;
use crate::autodiff::{Conv2dSpec, ParamGroup, ParamStore, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::model::layers::Conv;

#[derive(Debug, Clone)]
pub struct CrossAttention {
    pub query: Conv,
    pub key: Conv,
    pub value: Conv,
    pub output: Conv,
    heads: usize,
    dim: usize,
}

/// Attention output plus the weights `[N·heads, Q, S]` for inspection.
#[derive(Debug, Clone, Copy)]
pub struct AttentionOutput {
    pub fused: Var,
    pub weights: Var,
}

impl CrossAttention {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaRng,
        audio_channels: usize,
        visual_channels: usize,
        dim: usize,
        heads: usize,
    ) -> Self {
        let g = ParamGroup::Audio;
        // A key bias shifts every score of a query row by the same amount, which softmax cancels.
        let one = Conv2dSpec::new(1, 0);
        Self {
            query: Conv::new(store, rng, "attn.query", g, audio_channels, dim, 1, one),
            key: Conv::unbiased(store, rng, "attn.key", g, visual_channels, dim, 1, one),
            value: Conv::new(store, rng, "attn.value", g, visual_channels, dim, 1, one),
            output: Conv::new(store, rng, "attn.output", g, dim, audio_channels, 1, one),
            heads,
            dim,
        }
    }

    /// `ua + W_o · softmax(QᵀK / √d_h) Vᵀ`, reshaped back to the audio grid.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        ua: Var,
        uv: Var,
    ) -> Result<AttentionOutput> {
        let (a, v) = (tape.shape(ua).to_vec(), tape.shape(uv).to_vec());
        if a.len() != 4 || v.len() != 4 || a[0] != v[0] {
            return Err(Error::shape("cross_attention", format!("audio {a:?}, visual {v:?}")));
        }
        let (n, h, dh) = (a[0], self.heads, self.dim / self.heads);
        let (q_len, s_len) = (a[2] * a[3], v[2] * v[3]);

        let q = self.query.forward(tape, store, ua)?;
        let q = tape.reshape(q, &[n * h, dh, q_len])?;
        let q = tape.permute(q, &[0, 2, 1])?; // [N·h, Q, d_h]
        let k = self.key.forward(tape, store, uv)?;
        let k = tape.reshape(k, &[n * h, dh, s_len])?;
        let val = self.value.forward(tape, store, uv)?;
        let val = tape.reshape(val, &[n * h, dh, s_len])?;
        let val = tape.permute(val, &[0, 2, 1])?; // [N·h, S, d_h]

        let scores = tape.matmul(q, k)?; // [N·h, Q, S]
        let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let weights = tape.softmax(scores, 2)?;
        let mixed = tape.matmul(weights, val)?; // [N·h, Q, d_h]
        let mixed = tape.permute(mixed, &[0, 2, 1])?;
        let mixed = tape.reshape(mixed, &[n, self.dim, a[2], a[3]])?;
        let projected = self.output.forward(tape, store, mixed)?;
        let fused = tape.add(ua, projected)?;
        Ok(AttentionOutput { fused, weights })
    }
}
