//! The contrastive text/motion feature extractor used for metrics and for
//! the second-stage loss terms.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::batch::MotionPair;
use crate::error::{invalid, Error, Result};
use crate::motion::{COORDS_PER_CHARACTER, MAX_FRAMES};
use crate::nn::{sinusoidal_table, Activation, Attention, Binding, LayerNorm, Linear, Mlp, ParamId, ParamStore};
use crate::optim::{clip_global_norm, AdamWConfig, AdamWState};
use crate::seed::derive_seed;
use crate::tensor::Tensor;
use crate::text::TextFeatures;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub embed_dim: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub text_hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            model_dim: 32,
            num_heads: 4,
            num_layers: 2,
            text_hidden: 64,
            epochs: 150,
            batch_size: 8,
            optimizer: AdamWConfig { learning_rate: 1e-3, ..AdamWConfig::default() },
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.model_dim == 0 || self.text_hidden == 0 || self.num_layers == 0 {
            return Err(invalid!("evaluator dimensions must be positive"));
        }
        if self.num_heads == 0 || self.model_dim % self.num_heads != 0 {
            return Err(invalid!("evaluator model_dim {} not divisible by {} heads", self.model_dim, self.num_heads));
        }
        if self.batch_size < 2 {
            return Err(invalid!("contrastive batches need at least 2 pairs"));
        }
        self.optimizer.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct EncoderLayer {
    norm1: LayerNorm,
    attention: Attention,
    norm2: LayerNorm,
    ffn: Mlp,
}

const MAX_LOG_SCALE: f64 = 4.605_170_185_988_092; // ln 100
const INIT_LOG_SCALE: f64 = 2.659_260_036_932_778; // ln (1 / 0.07)

/// Transformer motion encoder plus a text projection head, both ending in
/// unit-norm embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalModel {
    config: EvalConfig,
    text_dim: usize,
    params: ParamStore,
    input: Linear,
    layers: Vec<EncoderLayer>,
    final_norm: LayerNorm,
    motion_out: Linear,
    text_head: Mlp,
    log_scale: ParamId,
}

/// One matched caption/motion pair.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalExample {
    pub text: TextFeatures,
    pub motion: MotionPair,
    pub frames: Vec<bool>,
}

impl EvalModel {
    pub fn new(config: &EvalConfig, text_dim: usize) -> Result<Self> {
        config.validate()?;
        if text_dim == 0 {
            return Err(invalid!("text feature width must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x65_76_61_6c, 0));
        let mut p = ParamStore::new();
        let d = config.model_dim;
        let input = Linear::new(&mut p, &mut rng, "motion.input", 2 * COORDS_PER_CHARACTER, d);
        let layers = (0..config.num_layers)
            .map(|i| EncoderLayer {
                norm1: LayerNorm::new(&mut p, &format!("motion.layer{i}.norm1"), d),
                attention: Attention::new(&mut p, &mut rng, &format!("motion.layer{i}.attn"), d, d, config.num_heads),
                norm2: LayerNorm::new(&mut p, &format!("motion.layer{i}.norm2"), d),
                ffn: Mlp::new(&mut p, &mut rng, &format!("motion.layer{i}.ffn"), (d, 2 * d, d), Activation::Gelu),
            })
            .collect();
        let final_norm = LayerNorm::new(&mut p, "motion.final_norm", d);
        let motion_out = Linear::new(&mut p, &mut rng, "motion.output", d, config.embed_dim);
        let text_head =
            Mlp::new(&mut p, &mut rng, "text.head", (text_dim, config.text_hidden, config.embed_dim), Activation::Gelu);
        let log_scale = p.add("log_scale", Tensor::scalar(INIT_LOG_SCALE));
        Ok(Self { config: *config, text_dim, params: p, input, layers, final_norm, motion_out, text_head, log_scale })
    }

    /// Rebuild from stored weights; names and shapes must match the config.
    pub fn from_params(config: &EvalConfig, text_dim: usize, params: &ParamStore) -> Result<Self> {
        let mut model = Self::new(config, text_dim)?;
        model.params.load_from(params)?;
        Ok(model)
    }

    pub fn config(&self) -> &EvalConfig {
        &self.config
    }

    pub fn text_dim(&self) -> usize {
        self.text_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Motion embedding of `motion` (`L x 68`, both characters side by
    /// side) on `tape`; padded frames are excluded.
    pub fn encode_motion(&self, tape: &mut Tape, b: &Binding, motion: Var, frames: &[bool]) -> Var {
        let len = tape.value(motion).rows();
        assert_eq!(frames.len(), len, "one validity flag per frame");
        let valid = frames.iter().filter(|&&f| f).count();
        assert!(valid > 0, "motion has no valid frames");

        let x = self.input.forward(tape, b, motion);
        let pos = tape.constant(sinusoidal_table(len, self.config.model_dim));
        let mut x = tape.add(x, pos);
        for layer in &self.layers {
            let h = layer.norm1.forward(tape, b, x);
            let h = layer.attention.forward(tape, b, h, h, Some(frames));
            x = tape.add(x, h);
            let h = layer.norm2.forward(tape, b, x);
            let h = layer.ffn.forward(tape, b, h);
            x = tape.add(x, h);
        }
        let x = self.final_norm.forward(tape, b, x);
        let weights = frames.iter().map(|&f| if f { 1.0 / valid as f64 } else { 0.0 }).collect();
        let pool = tape.constant(Tensor::row_vector(weights));
        let pooled = tape.matmul(pool, x);
        let e = self.motion_out.forward(tape, b, pooled);
        tape.normalize_rows(e)
    }

    pub fn encode_text(&self, tape: &mut Tape, b: &Binding, pooled: &[f64]) -> Var {
        assert_eq!(pooled.len(), self.text_dim, "text feature width");
        let x = tape.constant(Tensor::row_vector(pooled.to_vec()));
        let e = self.text_head.forward(tape, b, x);
        tape.normalize_rows(e)
    }

    fn check_motion(&self, motion: &MotionPair, frames: &[bool]) -> Result<()> {
        if frames.len() != motion.frames() || motion.frames() > MAX_FRAMES {
            return Err(Error::Shape(format!("{} frames with {} validity flags", motion.frames(), frames.len())));
        }
        if !frames.iter().any(|&f| f) {
            return Err(invalid!("motion has no valid frames"));
        }
        if !motion.is_finite() {
            return Err(Error::NonFinite(alloc::string::String::from("motion")));
        }
        Ok(())
    }

    pub fn embed_motion(&self, motion: &MotionPair, frames: &[bool]) -> Result<Vec<f64>> {
        self.check_motion(motion, frames)?;
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape, false);
        let m = tape.constant(motion.concat());
        let e = self.encode_motion(&mut tape, &b, m, frames);
        Ok(tape.value(e).data().to_vec())
    }

    pub fn embed_text(&self, text: &TextFeatures) -> Result<Vec<f64>> {
        if text.dim() != self.text_dim {
            return Err(Error::Shape(format!("text width {} but evaluator expects {}", text.dim(), self.text_dim)));
        }
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape, false);
        let e = self.encode_text(&mut tape, &b, &text.pooled);
        Ok(tape.value(e).data().to_vec())
    }

    /// Symmetric in-batch cross-entropy over scaled cosine similarities.
    fn contrastive_loss(&self, tape: &mut Tape, b: &Binding, batch: &[&EvalExample]) -> Var {
        let motions: Vec<Var> = batch
            .iter()
            .map(|ex| {
                let m = tape.constant(ex.motion.concat());
                self.encode_motion(tape, b, m, &ex.frames)
            })
            .collect();
        let texts: Vec<Var> = batch.iter().map(|ex| self.encode_text(tape, b, &ex.text.pooled)).collect();
        let m = tape.concat_rows(&motions);
        let t = tape.concat_rows(&texts);
        let sim = tape.matmul_nt(m, t);
        let scale = tape.exp(b.var(self.log_scale));
        let logits = tape.scale_by(sim, scale);
        let targets: Vec<usize> = (0..batch.len()).collect();
        let forward = tape.cross_entropy_rows(logits, targets.clone());
        let logits_t = tape.transpose(logits);
        let backward = tape.cross_entropy_rows(logits_t, targets);
        let total = tape.add(forward, backward);
        tape.scale(total, 0.5)
    }
}

/// Train a fresh evaluator on matched pairs. Returns the model and the mean
/// loss of every epoch.
pub fn train_eval_model(examples: &[EvalExample], config: &EvalConfig) -> Result<(EvalModel, Vec<f64>)> {
    config.validate()?;
    if examples.len() < config.batch_size {
        return Err(invalid!("{} pairs is fewer than the batch size {}", examples.len(), config.batch_size));
    }
    let text_dim = examples[0].text.dim();
    let mut model = EvalModel::new(config, text_dim)?;
    for ex in examples {
        if ex.text.dim() != text_dim {
            return Err(Error::Shape(format!("mixed text widths {} and {}", text_dim, ex.text.dim())));
        }
        model.check_motion(&ex.motion, &ex.frames)?;
    }
    let mut opt = AdamWState::new(&model.params);
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x73_68_75_66, epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&EvalExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let mut tape = Tape::new();
            let b = model.params.bind(&mut tape, true);
            let loss = model.contrastive_loss(&mut tape, &b, &batch);
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("evaluator loss at epoch {epoch}")));
            }
            let mut grads = tape.backward(loss);
            let mut g = b.gradients(&mut grads, &model.params);
            clip_global_norm(&mut g, 1.0);
            opt.update(&config.optimizer, &mut model.params, &g);
            let ls = model.params.get_mut(model.log_scale);
            ls.set(0, 0, ls.item().clamp(0.0, MAX_LOG_SCALE));
            total += value;
            batches += 1;
        }
        history.push(total / batches.max(1) as f64);
    }
    Ok((model, history))
}
