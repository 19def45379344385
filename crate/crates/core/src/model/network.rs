use crate::autodiff::{
    Conv2dSpec, Mode, ParamGroup, ParamStore, Real, RngStreams, Tape, Tensor, Var,
};
use crate::error::{Error, Result};
use crate::model::attention::{AttentionOutput, CrossAttention};
use crate::model::avad::{Avad, AvadRoute};
use crate::model::layers::{Conv, Norm};
use crate::model::ModelConfig;

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone)]
pub enum Modulation {
    Avad(Avad),
    /// Affine-free batch norm only.
    Plain(Norm),
}

#[derive(Debug, Clone)]
pub struct DecoderStage {
    pub conv: Conv,
    pub modulation: Modulation,
}

/// Encoder/attention/decoder layout; parameters live in a separate [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Network {
    pub config: ModelConfig,
    pub image: Vec<(Conv, Norm)>,
    pub audio: Vec<(Conv, Norm)>,
    pub attention: CrossAttention,
    pub decoder: Vec<DecoderStage>,
    pub head: Conv,
}

/// Handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// `[N, 2, F, T]` mask in (−1, 1): channel 0 real, channel 1 imaginary.
    pub mask: Var,
    /// Predicted difference spectrogram, real and imaginary parts, `[N, 1, F, T]` each.
    pub pred_re: Var,
    pub pred_im: Var,
    /// Audio encoder output before attention.
    pub bottleneck: Var,
    /// Attention output at the bottleneck.
    pub fused: Var,
    /// Image encoder output.
    pub visual: Var,
    pub attention_weights: Var,
}

impl Network {
    /// Builds the layout and initial parameters; initialization draws from the `init` stream of `seed`.
    pub fn build<T: Real>(config: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        config.validate()?;
        let mut rng = RngStreams::new(seed).stream("init");
        let rng = &mut rng;
        let mut store = ParamStore::new();
        let s2 = Conv2dSpec::new(2, 1);
        let s1 = Conv2dSpec::new(1, 1);

        let mut image = Vec::new();
        let mut c_in = 3;
        for (i, &c) in config.image_channels.iter().enumerate() {
            let name = format!("image.{i}");
            let conv = Conv::unbiased(&mut store, rng, &format!("{name}.conv"), ParamGroup::Image, c_in, c, 3, s2);
            let norm = Norm::new(&mut store, &format!("{name}.bn"), ParamGroup::Image, c, true);
            image.push((conv, norm));
            c_in = c;
        }

        let mut audio = Vec::new();
        let mut c_in = 2;
        for (i, &c) in config.audio_channels.iter().enumerate() {
            let name = format!("audio.{i}");
            let conv = Conv::unbiased(&mut store, rng, &format!("{name}.conv"), ParamGroup::Audio, c_in, c, 3, s2);
            let norm = Norm::new(&mut store, &format!("{name}.bn"), ParamGroup::Audio, c, true);
            audio.push((conv, norm));
            c_in = c;
        }

        let attention = CrossAttention::new(
            &mut store,
            rng,
            config.bottleneck_channels(),
            config.visual_channels(),
            config.attention_dim,
            config.attention_heads,
        );

        let ch = &config.audio_channels;
        let depth = ch.len();
        let skip_channels: Vec<usize> = std::iter::once(2).chain(ch[..depth - 1].iter().copied()).collect();
        let mut decoder = Vec::new();
        let mut c_in = ch[depth - 1];
        for k in 0..depth {
            let out = if k + 1 < depth { ch[depth - 2 - k] } else { ch[0] };
            let name = format!("decoder.{k}");
            let conv = Conv::unbiased(&mut store, rng, &format!("{name}.conv"), ParamGroup::Audio, c_in, out, 3, s1);
            let modulation = if config.avad {
                Modulation::Avad(Avad::new(
                    &mut store,
                    rng,
                    &format!("{name}.avad"),
                    out,
                    config.visual_channels(),
                    config.visual_grid(),
                    config.avad_hidden,
                ))
            } else {
                // Same buffer name as the AVAD norm so checkpoints line up.
                Modulation::Plain(Norm::new(&mut store, &format!("{name}.avad.bn"), ParamGroup::Audio, out, false))
            };
            decoder.push(DecoderStage { conv, modulation });
            c_in = out + skip_channels[depth - 1 - k];
        }
        let head = Conv::new(&mut store, rng, "head", ParamGroup::Audio, c_in, 2, 3, s1);
        let net = Self {
            config: config.clone(),
            image,
            audio,
            attention,
            decoder,
            head,
        };
        Ok((net, store))
    }

    /// `[N, 3, H, W]` normalized frames → `[N, C_v, H_v, W_v]`.
    pub fn encode_image<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        frames: Var,
        mode: Mode,
    ) -> Result<Var> {
        let s = tape.shape(frames);
        let c = &self.config;
        if s.len() != 4 || s[1] != 3 || s[2] != c.image_height || s[3] != c.image_width {
            return Err(Error::shape(
                "encode_image",
                format!("{s:?}, expected [N, 3, {}, {}]", c.image_height, c.image_width),
            ));
        }
        let mut x = frames;
        for (conv, norm) in &self.image {
            x = conv.forward(tape, store, x)?;
            x = norm.forward(tape, store, x, mode)?;
            x = tape.relu(x);
        }
        Ok(x)
    }

    /// `[N, 2, F, T]` mono spectrogram → bottleneck and skip list `[input, stage 1, …, stage D−1]`.
    pub fn encode_audio<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        spec: Var,
        mode: Mode,
    ) -> Result<(Var, Vec<Var>)> {
        let s = tape.shape(spec);
        let c = &self.config;
        if s.len() != 4 || s[1] != 2 || s[2] != c.freq_bins || s[3] != c.frames {
            return Err(Error::shape(
                "encode_audio",
                format!("{s:?}, expected [N, 2, {}, {}]", c.freq_bins, c.frames),
            ));
        }
        let mut skips = vec![spec];
        let mut x = spec;
        for (i, (conv, norm)) in self.audio.iter().enumerate() {
            x = conv.forward(tape, store, x)?;
            x = norm.forward(tape, store, x, mode)?;
            x = tape.leaky_relu(x, LEAKY_SLOPE);
            if i + 1 < self.audio.len() {
                skips.push(x);
            }
        }
        Ok((x, skips))
    }

    pub fn fuse<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        ua: Var,
        uv: Var,
    ) -> Result<AttentionOutput> {
        self.attention.forward(tape, store, ua, uv)
    }

    /// Decoder: per stage upsample → conv → modulation → LeakyReLU → concat skip; then conv + tanh.
    #[allow(clippy::too_many_arguments)]
    pub fn decode<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        fused: Var,
        skips: &[Var],
        uv: Var,
        mode: Mode,
        route: AvadRoute,
    ) -> Result<Var> {
        let depth = self.decoder.len();
        if skips.len() != depth {
            return Err(Error::shape("decode", format!("{} skips for depth {depth}", skips.len())));
        }
        let mut x = fused;
        for (k, stage) in self.decoder.iter().enumerate() {
            x = tape.upsample_nearest2(x)?;
            x = stage.conv.forward(tape, store, x)?;
            x = match &stage.modulation {
                Modulation::Avad(avad) => avad.forward(tape, store, x, uv, mode, route)?,
                Modulation::Plain(norm) => norm.forward(tape, store, x, mode)?,
            };
            x = tape.leaky_relu(x, LEAKY_SLOPE);
            x = tape.concat(&[x, skips[depth - 1 - k]], 1)?;
        }
        let x = self.head.forward(tape, store, x)?;
        Ok(tape.tanh(x))
    }

    /// Complex product of a `[N, 2, F, T]` mask with the mono spectrogram (same layout).
    pub fn masked_product<T: Real>(tape: &mut Tape<T>, mask: Var, mono: Var) -> Result<(Var, Var)> {
        let (a_re, a_im) = (tape.slice(mask, 1, 0, 1)?, tape.slice(mask, 1, 1, 1)?);
        let (m_re, m_im) = (tape.slice(mono, 1, 0, 1)?, tape.slice(mono, 1, 1, 1)?);
        let rr = tape.mul(a_re, m_re)?;
        let ii = tape.mul(a_im, m_im)?;
        let ri = tape.mul(a_re, m_im)?;
        let ir = tape.mul(a_im, m_re)?;
        Ok((tape.sub(rr, ii)?, tape.add(ri, ir)?))
    }

    /// Global average pooling of `[N, C, H, W]` followed by unit normalization → `[N, C]`.
    pub fn embed<T: Real>(tape: &mut Tape<T>, features: Var) -> Result<Var> {
        let s = tape.shape(features).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("embed", format!("{s:?}")));
        }
        let p = s[2] * s[3];
        let flat = tape.reshape(features, &[s[0] * s[1], p])?;
        let avg = tape.constant(Tensor::full(&[p, 1], T::one() / T::from_usize(p).unwrap()));
        let pooled = tape.matmul(flat, avg)?;
        let pooled = tape.reshape(pooled, &[s[0], s[1]])?;
        tape.l2_normalize(pooled, 1, 1e-12)
    }

    /// Full pass from inputs to the predicted difference spectrogram.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        mono: Var,
        frames: Var,
        mode: Mode,
    ) -> Result<ForwardOutput> {
        let visual = self.encode_image(tape, store, frames, mode)?;
        self.forward_with_visual(tape, store, mono, visual, mode)
    }

    /// As [`Self::forward`] with precomputed image features.
    pub fn forward_with_visual<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        mono: Var,
        visual: Var,
        mode: Mode,
    ) -> Result<ForwardOutput> {
        let (ua, skips) = self.encode_audio(tape, store, mono, mode)?;
        self.forward_encoded(tape, store, mono, ua, &skips, visual, mode)
    }

    /// The part of [`Self::forward`] after both encoders.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_encoded<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        mono: Var,
        ua: Var,
        skips: &[Var],
        visual: Var,
        mode: Mode,
    ) -> Result<ForwardOutput> {
        let att = self.fuse(tape, store, ua, visual)?;
        let mask = self.decode(tape, store, att.fused, skips, visual, mode, AvadRoute::Factored)?;
        let (pred_re, pred_im) = Self::masked_product(tape, mask, mono)?;
        Ok(ForwardOutput {
            mask,
            pred_re,
            pred_im,
            bottleneck: ua,
            fused: att.fused,
            visual,
            attention_weights: att.weights,
        })
    }
}
