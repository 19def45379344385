//! Audio-visual adaptive de-normalization.
//!
//! The audio feature map is batch-normalized (no affine), then scaled and
//! shifted by per-position `α, β` predicted from how strongly each audio
//! position correlates with every projected visual position:
//!
//! ```text
//! n  = BN(x)                                  [N, C, Q]     (Q = F·T)
//! v' = conv1x1(u_v) + p_v                     [N, C, S]     (S = H_v·W_v)
//! c  = nᵀ v'                                  [N, Q, S]     relevance map
//! h  = ReLU(c·W + b)                          [N, Q, hidden]
//! α, β = conv1x1(h)                           [N, C, F, T]
//! out = n + α ⊙ n + β
//! ```
//!
//! The relevance map is never materialized during training: by
//! associativity `c·W = nᵀ (v'·W)`, which costs `C·S·hidden + C·Q·hidden`
//! instead of `Q·S·(C + hidden)`. [`Avad::relevance_map`] and the
//! [`AvadRoute::Explicit`] path build it for inspection and testing.

use crate::autodiff::rng::Rng as ChaRng;
use crate::autodiff::{Mode, ParamGroup, ParamId, ParamStore, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::model::layers::{fan_in_uniform, Conv, Linear, Norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AvadRoute {
    /// `nᵀ (v'·W)`; never forms the `Q × S` relevance map.
    Factored,
    /// `(nᵀ v')·W`; forms the relevance map explicitly.
    Explicit,
}

#[derive(Debug, Clone)]
pub struct Avad {
    pub norm: Norm,
    pub visual_proj: Conv,
    pub positional: ParamId,
    pub shared: Linear,
    pub alpha: Conv,
    pub beta: Conv,
    channels: usize,
    visual_grid: (usize, usize),
}

impl Avad {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaRng,
        name: &str,
        channels: usize,
        visual_channels: usize,
        visual_grid: (usize, usize),
        hidden: usize,
    ) -> Self {
        let g = ParamGroup::Audio;
        let (hv, wv) = visual_grid;
        let s = hv * wv;
        let norm = Norm::new(store, &format!("{name}.bn"), g, channels, false);
        let visual_proj = Conv::new(
            store,
            rng,
            &format!("{name}.visual_proj"),
            g,
            visual_channels,
            channels,
            1,
            crate::autodiff::Conv2dSpec::new(1, 0),
        );
        let positional = store.add(
            format!("{name}.positional"),
            fan_in_uniform(rng, &[channels, hv, wv], s).map(|v| v * T::from_f64_lossy(0.1)),
            g,
        );
        let shared = Linear::new(store, rng, &format!("{name}.shared"), g, s, hidden);
        let alpha = Conv::zeroed(store, &format!("{name}.alpha"), g, hidden, channels);
        let beta = Conv::zeroed(store, &format!("{name}.beta"), g, hidden, channels);
        Self {
            norm,
            visual_proj,
            positional,
            shared,
            alpha,
            beta,
            channels,
            visual_grid,
        }
    }

    fn check(&self, tape: &Tape<impl Real>, x: Var, uv: Var) -> Result<(usize, usize, usize)> {
        let xs = tape.shape(x);
        let vs = tape.shape(uv);
        if xs.len() != 4 || xs[1] != self.channels {
            return Err(Error::shape("avad", format!("audio features {xs:?}, expected {} channels", self.channels)));
        }
        if vs.len() != 4 || vs[0] != xs[0] || (vs[2], vs[3]) != self.visual_grid {
            return Err(Error::shape(
                "avad",
                format!("visual features {vs:?} for audio {xs:?}, grid {:?}", self.visual_grid),
            ));
        }
        Ok((xs[0], xs[2], xs[3]))
    }

    /// Projected visual features with positional embedding, `[N, C, S]`.
    fn visual_keys<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, uv: Var) -> Result<Var> {
        let n = tape.shape(uv)[0];
        let proj = self.visual_proj.forward(tape, store, uv)?;
        let pos = tape.param(store, self.positional);
        let pos = tape.tile_batch(pos, n)?;
        let v = tape.add(proj, pos)?;
        let s = self.visual_grid.0 * self.visual_grid.1;
        tape.reshape(v, &[n, self.channels, s])
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        x: Var,
        uv: Var,
        mode: Mode,
        route: AvadRoute,
    ) -> Result<Var> {
        let (n, f, t) = self.check(tape, x, uv)?;
        let (c, q) = (self.channels, f * t);
        let hidden = store.get(self.shared.bias).value.numel();
        let s = self.visual_grid.0 * self.visual_grid.1;

        let normed = self.norm.forward(tape, store, x, mode)?;
        let keys = self.visual_keys(tape, store, uv)?;
        let nq = tape.reshape(normed, &[n, c, q])?;
        let w = tape.param(store, self.shared.weight);
        let h = match route {
            AvadRoute::Factored => {
                let flat = tape.reshape(keys, &[n * c, s])?;
                let g = tape.matmul(flat, w)?; // [N·C, hidden]
                let g = tape.reshape(g, &[n, c, hidden])?;
                let gt = tape.permute(g, &[0, 2, 1])?; // [N, hidden, C]
                tape.matmul(gt, nq)? // [N, hidden, Q]
            }
            AvadRoute::Explicit => {
                let rel = self.relevance_from(tape, nq, keys)?; // [N, Q, S]
                let rel = tape.reshape(rel, &[n * q, s])?;
                let h = tape.matmul(rel, w)?; // [N·Q, hidden]
                let h = tape.reshape(h, &[n, q, hidden])?;
                tape.permute(h, &[0, 2, 1])?
            }
        };
        let b = tape.param(store, self.shared.bias);
        let h = tape.channel_affine(h, None, Some(b))?;
        let h = tape.relu(h);
        let h = tape.reshape(h, &[n, hidden, f, t])?;
        let alpha = self.alpha.forward(tape, store, h)?;
        let beta = self.beta.forward(tape, store, h)?;
        let scaled = tape.mul(alpha, normed)?;
        let out = tape.add(normed, scaled)?;
        tape.add(out, beta)
    }

    fn relevance_from<T: Real>(&self, tape: &mut Tape<T>, nq: Var, keys: Var) -> Result<Var> {
        let nt = tape.permute(nq, &[0, 2, 1])?; // [N, Q, C]
        tape.matmul(nt, keys)
    }

    /// The relevance map `c[q, s] = Σ_c BN(x)[c, q]·v'[c, s]`, shape `[N, Q, S]`.
    pub fn relevance_map<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        x: Var,
        uv: Var,
        mode: Mode,
    ) -> Result<Var> {
        let (n, f, t) = self.check(tape, x, uv)?;
        let normed = self.norm.forward(tape, store, x, mode)?;
        let keys = self.visual_keys(tape, store, uv)?;
        let nq = tape.reshape(normed, &[n, self.channels, f * t])?;
        self.relevance_from(tape, nq, keys)
    }
}
