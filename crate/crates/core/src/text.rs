//! Caption features: the encoder contract, long-prompt chunking, dual-encoder
//! concatenation, and a deterministic stand-in encoder.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::sinusoidal_code;
use crate::tensor::Tensor;

/// Token-level and pooled features of one caption.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextFeatures {
    /// `n_tokens x dim`.
    pub local: Tensor,
    /// `dim` entries.
    pub pooled: Vec<f64>,
}

impl TextFeatures {
    pub fn new(local: Tensor, pooled: Vec<f64>) -> Result<Self> {
        if local.rows() == 0 {
            return Err(invalid!("text features need at least one token"));
        }
        if local.cols() != pooled.len() {
            return Err(Error::Shape(format!(
                "local width {} differs from pooled width {}",
                local.cols(),
                pooled.len()
            )));
        }
        if !local.is_finite() || pooled.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(alloc::string::String::from("text features")));
        }
        Ok(Self { local, pooled })
    }

    /// A single all-zero token; the "no caption" input.
    pub fn null(dim: usize) -> Self {
        Self { local: Tensor::zeros(1, dim), pooled: alloc::vec![0.0; dim] }
    }

    pub fn n_tokens(&self) -> usize {
        self.local.rows()
    }

    pub fn dim(&self) -> usize {
        self.pooled.len()
    }
}

/// A text encoder with a hard per-pass token limit.
pub trait TextEncoder {
    fn token_limit(&self) -> usize;
    fn local_dim(&self) -> usize;
    fn tokenize(&self, text: &str) -> Vec<u32>;
    /// Encode at most `token_limit` ids into one local row per id plus a
    /// pooled vector.
    fn encode(&self, ids: &[u32]) -> Result<(Tensor, Vec<f64>)>;
}

/// Anything that turns a caption into [`TextFeatures`].
pub trait FeatureSource {
    fn dim(&self) -> usize;
    fn features(&self, caption: &str) -> Result<TextFeatures>;
}

/// Encode `ids` in consecutive chunks of at most `token_limit` tokens. Local
/// rows are concatenated in order; pooled vectors are averaged.
pub fn encode_chunked(ids: &[u32], encoder: &dyn TextEncoder) -> Result<TextFeatures> {
    if ids.is_empty() {
        return Err(invalid!("caption has no tokens"));
    }
    let limit = encoder.token_limit();
    if limit == 0 {
        return Err(invalid!("encoder token limit must be positive"));
    }
    let dim = encoder.local_dim();
    let mut locals = Vec::new();
    let mut pooled = alloc::vec![0.0; dim];
    let mut chunks = 0usize;
    for chunk in ids.chunks(limit) {
        let (local, pool) = encoder.encode(chunk)?;
        if local.rows() != chunk.len() || local.cols() != dim || pool.len() != dim {
            return Err(Error::Shape(format!(
                "encoder returned {:?} local / {} pooled for {} tokens of width {dim}",
                local.shape(),
                pool.len(),
                chunk.len()
            )));
        }
        for (p, v) in pooled.iter_mut().zip(&pool) {
            *p += v;
        }
        locals.push(local);
        chunks += 1;
    }
    if chunks > 1 {
        for p in &mut pooled {
            *p /= chunks as f64;
        }
    }
    let parts: Vec<&Tensor> = locals.iter().collect();
    TextFeatures::new(Tensor::vstack(&parts), pooled)
}

pub fn chunk_and_encode(text: &str, encoder: &dyn TextEncoder) -> Result<TextFeatures> {
    if text.trim().is_empty() {
        return Err(invalid!("caption is empty"));
    }
    encode_chunked(&encoder.tokenize(text), encoder)
}

/// Run the caption through both encoders and concatenate along the feature
/// axis. The first encoder's tokenizer is authoritative; the second encoder
/// consumes the same ids. Without a second encoder this is
/// [`chunk_and_encode`].
pub fn concat_dual_encoders(
    text: &str,
    first: &dyn TextEncoder,
    second: Option<&dyn TextEncoder>,
) -> Result<TextFeatures> {
    if text.trim().is_empty() {
        return Err(invalid!("caption is empty"));
    }
    let ids = first.tokenize(text);
    let fa = encode_chunked(&ids, first)?;
    let Some(second) = second else { return Ok(fa) };
    let fb = encode_chunked(&ids, second)?;
    if fa.n_tokens() != fb.n_tokens() {
        return Err(Error::Shape(format!(
            "token count mismatch between encoders: {} vs {}",
            fa.n_tokens(),
            fb.n_tokens()
        )));
    }
    let local = Tensor::hstack(&[&fa.local, &fb.local]);
    let mut pooled = fa.pooled;
    pooled.extend_from_slice(&fb.pooled);
    TextFeatures::new(local, pooled)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StandinConfig {
    pub seed: u64,
    pub local_dim: usize,
    pub token_limit: usize,
    pub vocab_size: usize,
}

impl Default for StandinConfig {
    fn default() -> Self {
        Self { seed: 0, local_dim: 32, token_limit: 77, vocab_size: 4096 }
    }
}

/// Whitespace tokenizer over a hashed vocabulary with an embedding table.
/// Local features are embeddings plus sinusoidal position codes; the pooled
/// feature is their mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandinEncoder {
    pub token_limit: usize,
    /// `vocab_size x local_dim`.
    pub table: Tensor,
}

impl StandinEncoder {
    pub fn new(cfg: &StandinConfig) -> Result<Self> {
        if cfg.local_dim == 0 || cfg.vocab_size == 0 || cfg.token_limit == 0 {
            return Err(invalid!("stand-in encoder dimensions must be positive: {cfg:?}"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let table = Tensor::from_fn(cfg.vocab_size, cfg.local_dim, |_, _| StandardNormal.sample(&mut rng));
        Ok(Self { token_limit: cfg.token_limit, table })
    }
}

impl TextEncoder for StandinEncoder {
    fn token_limit(&self) -> usize {
        self.token_limit
    }

    fn local_dim(&self) -> usize {
        self.table.cols()
    }

    fn tokenize(&self, text: &str) -> Vec<u32> {
        let vocab = self.table.rows() as u64;
        text.split_whitespace()
            .map(|w| (fnv1a(w.to_lowercase().as_bytes()) % vocab) as u32)
            .collect()
    }

    fn encode(&self, ids: &[u32]) -> Result<(Tensor, Vec<f64>)> {
        if ids.is_empty() || ids.len() > self.token_limit {
            return Err(invalid!("encode takes 1..={} ids, got {}", self.token_limit, ids.len()));
        }
        let dim = self.local_dim();
        let mut local = Tensor::zeros(ids.len(), dim);
        for (pos, &id) in ids.iter().enumerate() {
            let id = id as usize;
            if id >= self.table.rows() {
                return Err(invalid!("token id {id} outside the vocabulary"));
            }
            let code = sinusoidal_code(pos as f64, dim);
            for ((o, e), c) in local.row_mut(pos).iter_mut().zip(self.table.row(id)).zip(code) {
                *o = e + c;
            }
        }
        let mut pooled = alloc::vec![0.0; dim];
        for r in 0..local.rows() {
            for (p, v) in pooled.iter_mut().zip(local.row(r)) {
                *p += v;
            }
        }
        for p in &mut pooled {
            *p /= ids.len() as f64;
        }
        Ok((local, pooled))
    }
}

/// Built-in text conditioning: one stand-in encoder, or two concatenated.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextConfig {
    pub primary: StandinConfig,
    pub secondary: Option<StandinConfig>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StandinText {
    primary: StandinEncoder,
    secondary: Option<StandinEncoder>,
}

impl StandinText {
    pub fn new(cfg: &TextConfig) -> Result<Self> {
        Ok(Self {
            primary: StandinEncoder::new(&cfg.primary)?,
            secondary: cfg.secondary.as_ref().map(StandinEncoder::new).transpose()?,
        })
    }
}

impl FeatureSource for StandinText {
    fn dim(&self) -> usize {
        self.primary.local_dim() + self.secondary.as_ref().map_or(0, TextEncoder::local_dim)
    }

    fn features(&self, caption: &str) -> Result<TextFeatures> {
        concat_dual_encoders(caption, &self.primary, self.secondary.as_ref().map(|e| e as &dyn TextEncoder))
    }
}
