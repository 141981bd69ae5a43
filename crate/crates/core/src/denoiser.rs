//! The dual-tower denoiser. Both characters run through the same weights;
//! at every layer each stream attends to itself, to an optional reference
//! pose, to the caption tokens, and to the other stream.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::batch::{MotionPair, ReferenceFrames};
use crate::diffusion::{guide, X0Predictor};
use crate::error::{invalid, Error, Result};
use crate::losses::PairVars;
use crate::motion::{COORDS_PER_CHARACTER, MAX_FRAMES};
use crate::nn::{sinusoidal_code, sinusoidal_table, Activation, Attention, Binding, LayerNorm, Linear, Mlp, ParamStore};
use crate::seed::derive_seed;
use crate::tensor::Tensor;
use crate::text::TextFeatures;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub num_layers: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub max_len: usize,
    pub input_dim: usize,
    pub dropout: f64,
    /// Build the reference-pose attention sub-layer.
    pub reference: bool,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            num_layers: 8,
            model_dim: 64,
            num_heads: 4,
            max_len: MAX_FRAMES,
            input_dim: COORDS_PER_CHARACTER,
            dropout: 0.0,
            reference: true,
            seed: 0,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(invalid!("num_layers must be at least 1"));
        }
        if self.model_dim == 0 || self.num_heads == 0 || self.model_dim % self.num_heads != 0 {
            return Err(invalid!("model_dim {} must be a positive multiple of num_heads {}", self.model_dim, self.num_heads));
        }
        if self.input_dim != COORDS_PER_CHARACTER {
            return Err(invalid!("input_dim must be {COORDS_PER_CHARACTER}, got {}", self.input_dim));
        }
        if self.max_len == 0 || self.max_len > MAX_FRAMES {
            return Err(invalid!("max_len must be in [1, {MAX_FRAMES}], got {}", self.max_len));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::OutOfRange(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Block {
    self_norm: LayerNorm,
    self_attn: Attention,
    reference: Option<(LayerNorm, Attention)>,
    text_norm: LayerNorm,
    text_attn: Attention,
    other_norm: LayerNorm,
    other_kv_norm: LayerNorm,
    other_attn: Attention,
    ffn_norm: LayerNorm,
    ffn: Mlp,
}

/// Inverted dropout driven by an optional training RNG.
struct Dropout<'r> {
    rate: f64,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl Dropout<'_> {
    fn apply(&mut self, tape: &mut Tape, x: Var) -> Var {
        let Some(rng) = self.rng.as_deref_mut() else { return x };
        if self.rate == 0.0 {
            return x;
        }
        let (rows, cols) = tape.value(x).shape();
        let keep = 1.0 / (1.0 - self.rate);
        let mask = Tensor::from_fn(rows, cols, |_, _| if rng.random::<f64>() < self.rate { 0.0 } else { keep });
        let m = tape.constant(mask);
        tape.mul(x, m)
    }
}

/// Per-call conditioning shared by both towers.
struct Conditioning {
    cond: Var,
    local: Var,
    frames: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser {
    config: DenoiserConfig,
    text_dim: usize,
    num_timesteps: usize,
    params: ParamStore,
    input: Linear,
    time_mlp: Mlp,
    pool_proj: Linear,
    ref_mlp: Option<Mlp>,
    blocks: Vec<Block>,
    final_norm: LayerNorm,
    output: Linear,
}

impl Denoiser {
    pub fn new(config: &DenoiserConfig, text_dim: usize, num_timesteps: usize) -> Result<Self> {
        config.validate()?;
        if text_dim == 0 || num_timesteps == 0 {
            return Err(invalid!("text width and timestep count must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x64_65_6e_6f, 0));
        let rng = &mut rng;
        let mut p = ParamStore::new();
        let (d, h) = (config.model_dim, config.num_heads);
        let input = Linear::new(&mut p, rng, "input", config.input_dim, d);
        let time_mlp = Mlp::new(&mut p, rng, "time", (d, d, d), Activation::Silu);
        let pool_proj = Linear::new(&mut p, rng, "pool_proj", text_dim, d);
        let ref_mlp = config
            .reference
            .then(|| Mlp::new(&mut p, rng, "ref", (2 * config.input_dim, d, d), Activation::Silu));
        let mut blocks = Vec::with_capacity(config.num_layers);
        for i in 0..config.num_layers {
            let n = |s: &str| format!("block{i}.{s}");
            let self_norm = LayerNorm::new(&mut p, &n("self_norm"), d);
            let self_attn = Attention::new(&mut p, rng, &n("self_attn"), d, d, h);
            let reference = config
                .reference
                .then(|| (LayerNorm::new(&mut p, &n("ref_norm"), d), Attention::new(&mut p, rng, &n("ref_attn"), d, d, h)));
            let text_norm = LayerNorm::new(&mut p, &n("text_norm"), d);
            let text_attn = Attention::new(&mut p, rng, &n("text_attn"), d, text_dim, h);
            let other_norm = LayerNorm::new(&mut p, &n("other_norm"), d);
            let other_kv_norm = LayerNorm::new(&mut p, &n("other_kv_norm"), d);
            let other_attn = Attention::new(&mut p, rng, &n("other_attn"), d, d, h);
            let ffn_norm = LayerNorm::new(&mut p, &n("ffn_norm"), d);
            let ffn = Mlp::new(&mut p, rng, &n("ffn"), (d, 2 * d, d), Activation::Gelu);
            blocks.push(Block {
                self_norm,
                self_attn,
                reference,
                text_norm,
                text_attn,
                other_norm,
                other_kv_norm,
                other_attn,
                ffn_norm,
                ffn,
            });
        }
        let final_norm = LayerNorm::new(&mut p, "final_norm", d);
        let output = Linear::new(&mut p, rng, "output", d, config.input_dim);
        Ok(Self {
            config: *config,
            text_dim,
            num_timesteps,
            params: p,
            input,
            time_mlp,
            pool_proj,
            ref_mlp,
            blocks,
            final_norm,
            output,
        })
    }

    /// Rebuild from stored weights; names and shapes must match the config.
    pub fn from_params(config: &DenoiserConfig, text_dim: usize, num_timesteps: usize, params: &ParamStore) -> Result<Self> {
        let mut model = Self::new(config, text_dim, num_timesteps)?;
        model.params.load_from(params)?;
        Ok(model)
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn text_dim(&self) -> usize {
        self.text_dim
    }

    pub fn num_timesteps(&self) -> usize {
        self.num_timesteps
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t >= self.num_timesteps {
            return Err(Error::OutOfRange(format!("timestep {t} outside [0, {})", self.num_timesteps)));
        }
        Ok(())
    }

    fn timestep_var(&self, tape: &mut Tape, b: &Binding, t: usize) -> Var {
        let code = tape.constant(Tensor::row_vector(sinusoidal_code(t as f64, self.config.model_dim)));
        self.time_mlp.forward(tape, b, code)
    }

    /// Timestep feature: the sinusoidal code of `t` through the two-layer
    /// perceptron.
    pub fn embed_timestep(&self, t: usize) -> Result<Vec<f64>> {
        self.check_t(t)?;
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape, false);
        let v = self.timestep_var(&mut tape, &b, t);
        Ok(tape.value(v).data().to_vec())
    }

    fn conditioning(&self, tape: &mut Tape, b: &Binding, t: usize, text: &TextFeatures, frames: &[bool]) -> Conditioning {
        let f_t = self.timestep_var(tape, b, t);
        let pooled = tape.constant(Tensor::row_vector(text.pooled.clone()));
        let pooled = self.pool_proj.forward(tape, b, pooled);
        let cond = tape.add(pooled, f_t);
        let local = tape.constant(text.local.clone());
        Conditioning { cond, local, frames: frames.to_vec() }
    }

    /// One interactive block for the stream `a` given the other stream `b`.
    fn block_forward(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        block: &Block,
        a: Var,
        other: Var,
        ctx: &Conditioning,
        reference: Option<Var>,
        dropout: &mut Dropout<'_>,
    ) -> Var {
        let frames = &ctx.frames;
        let mut with_cond = Vec::with_capacity(frames.len() + 1);
        with_cond.push(true);
        with_cond.extend_from_slice(frames);

        let h = block.self_norm.forward(tape, bind, a);
        let keys = tape.concat_rows(&[ctx.cond, h]);
        let s = block.self_attn.forward(tape, bind, h, keys, Some(with_cond.as_slice()));
        let s = dropout.apply(tape, s);
        let mut x = tape.add(a, s);

        if let (Some((norm, attn)), Some(r)) = (&block.reference, reference) {
            let h = norm.forward(tape, bind, x);
            let keys = tape.concat_rows(&[h, r]);
            let mut with_ref = frames.clone();
            with_ref.push(true);
            let s = attn.forward(tape, bind, h, keys, Some(with_ref.as_slice()));
            let s = dropout.apply(tape, s);
            x = tape.add(x, s);
        }

        let h = block.text_norm.forward(tape, bind, x);
        let s = block.text_attn.forward(tape, bind, h, ctx.local, None);
        let s = dropout.apply(tape, s);
        x = tape.add(x, s);

        let h = block.other_norm.forward(tape, bind, x);
        let kv = block.other_kv_norm.forward(tape, bind, other);
        let kv = tape.add_row(kv, ctx.cond);
        let s = block.other_attn.forward(tape, bind, h, kv, Some(frames));
        let s = dropout.apply(tape, s);
        x = tape.add(x, s);

        let h = block.ffn_norm.forward(tape, bind, x);
        let s = block.ffn.forward(tape, bind, h);
        let s = dropout.apply(tape, s);
        tape.add(x, s)
    }

    fn reference_feature(&self, tape: &mut Tape, b: &Binding, own: &Tensor, other: &Tensor) -> Option<Var> {
        let mlp = self.ref_mlp.as_ref()?;
        let x = tape.constant(Tensor::hstack(&[own, other]));
        Some(mlp.forward(tape, b, x))
    }

    /// Validate shapes and ranges of one denoising call.
    pub fn check_inputs(
        &self,
        s_t: &MotionPair,
        t: usize,
        text: &TextFeatures,
        reference: Option<&ReferenceFrames>,
        frames: &[bool],
    ) -> Result<()> {
        self.check_t(t)?;
        let len = s_t.frames();
        if s_t.a.shape() != s_t.b.shape() || s_t.a.cols() != self.config.input_dim {
            return Err(Error::Shape(format!("pair tensors {:?} and {:?}", s_t.a.shape(), s_t.b.shape())));
        }
        if len == 0 || len > self.config.max_len {
            return Err(invalid!("sequence length {len} outside [1, {}]", self.config.max_len));
        }
        if frames.len() != len || !frames.iter().any(|&f| f) {
            return Err(invalid!("need {len} frame flags with at least one valid frame"));
        }
        if text.dim() != self.text_dim {
            return Err(Error::Shape(format!("text width {} but model expects {}", text.dim(), self.text_dim)));
        }
        if let Some(r) = reference {
            let want = (1, self.config.input_dim);
            if r.a.shape() != want || r.b.shape() != want {
                return Err(Error::Shape(format!("reference frames {:?}/{:?}", r.a.shape(), r.b.shape())));
            }
            if self.ref_mlp.is_none() {
                return Err(invalid!("model was built without reference attention"));
            }
        }
        if !s_t.is_finite() {
            return Err(Error::NonFinite(alloc::string::String::from("noised input")));
        }
        Ok(())
    }

    /// Both towers on `tape`. `rng` enables dropout (training mode).
    #[allow(clippy::too_many_arguments)]
    pub fn denoise_pair(
        &self,
        tape: &mut Tape,
        b: &Binding,
        s_t: PairVars,
        t: usize,
        text: &TextFeatures,
        reference: Option<&ReferenceFrames>,
        frames: &[bool],
        rng: Option<&mut ChaCha8Rng>,
    ) -> PairVars {
        let len = tape.value(s_t.a).rows();
        let mut dropout = Dropout { rate: self.config.dropout, rng };
        let ctx = self.conditioning(tape, b, t, text, frames);
        let (ref_a, ref_b) = match reference {
            Some(r) => (self.reference_feature(tape, b, &r.a, &r.b), self.reference_feature(tape, b, &r.b, &r.a)),
            None => (None, None),
        };
        let pos = tape.constant(sinusoidal_table(len, self.config.model_dim));
        let xa = self.input.forward(tape, b, s_t.a);
        let mut xa = tape.add(xa, pos);
        let xb = self.input.forward(tape, b, s_t.b);
        let mut xb = tape.add(xb, pos);
        for block in &self.blocks {
            let na = self.block_forward(tape, b, block, xa, xb, &ctx, ref_a, &mut dropout);
            let nb = self.block_forward(tape, b, block, xb, xa, &ctx, ref_b, &mut dropout);
            xa = na;
            xb = nb;
        }
        let out = |tape: &mut Tape, x: Var| {
            let h = self.final_norm.forward(tape, b, x);
            self.output.forward(tape, b, h)
        };
        PairVars { a: out(tape, xa), b: out(tape, xb) }
    }

    /// Clean-signal estimate for a noised pair (inference, no dropout).
    pub fn predict(
        &self,
        s_t: &MotionPair,
        t: usize,
        text: &TextFeatures,
        reference: Option<&ReferenceFrames>,
        frames: &[bool],
    ) -> Result<MotionPair> {
        self.check_inputs(s_t, t, text, reference, frames)?;
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape, false);
        let x = PairVars::constant(&mut tape, s_t);
        let y = self.denoise_pair(&mut tape, &b, x, t, text, reference, frames, None);
        let out = y.value(&tape);
        if !out.is_finite() {
            return Err(Error::NonFinite(format!("denoiser output at t = {t}")));
        }
        Ok(out)
    }
}

/// Adapts a [`Denoiser`] with fixed conditioning to the sampler, with
/// optional classifier-free guidance against the null caption.
pub struct ConditionedDenoiser<'m> {
    pub model: &'m Denoiser,
    pub text: TextFeatures,
    pub reference: Option<ReferenceFrames>,
    pub frames: Vec<bool>,
    pub guidance: Option<f64>,
}

impl X0Predictor for ConditionedDenoiser<'_> {
    fn predict_x0(&self, s_t: &MotionPair, t: usize) -> Result<MotionPair> {
        let cond = self.model.predict(s_t, t, &self.text, self.reference.as_ref(), &self.frames)?;
        match self.guidance {
            None => Ok(cond),
            Some(scale) => {
                let null = TextFeatures::null(self.model.text_dim());
                let uncond = self.model.predict(s_t, t, &null, self.reference.as_ref(), &self.frames)?;
                Ok(guide(&cond, &uncond, scale))
            }
        }
    }
}
