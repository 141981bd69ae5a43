//! Parameter storage and the layers shared by the denoiser and the evaluator.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Grads, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(usize);

/// Named, ordered collection of weight tensors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replace every tensor with the same-named tensor from `other`,
    /// requiring identical names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Shape(format!(
                "parameter names differ ({} vs {} tensors)",
                self.names.len(),
                other.names.len()
            )));
        }
        for ((name, mine), theirs) in self.names.iter().zip(&mut self.tensors).zip(&other.tensors) {
            if mine.shape() != theirs.shape() {
                return Err(Error::Shape(format!(
                    "{name}: expected {:?}, found {:?}",
                    mine.shape(),
                    theirs.shape()
                )));
            }
            *mine = theirs.clone();
        }
        Ok(())
    }

    /// 64-bit FNV-1a digest over names, shapes, and exact bit patterns.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (name, t) in self.iter() {
            eat(name.as_bytes());
            eat(&(t.rows() as u64).to_le_bytes());
            eat(&(t.cols() as u64).to_le_bytes());
            for v in t.data() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Place every parameter on `tape`, trainable or frozen.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Binding {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        Binding { vars }
    }
}

/// The tape variables of a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradient of every bound parameter, zero where none flowed.
    pub fn gradients(&self, grads: &mut Grads, store: &ParamStore) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(store.tensors())
            .map(|(v, t)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols())))
            .collect()
    }
}

pub(crate) fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    Tensor::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..bound))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier(rng, in_dim, out_dim));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, out_dim));
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward(&self, tape: &mut Tape, b: &Binding, x: Var) -> Var {
        let y = tape.matmul(x, b.var(self.weight));
        tape.add_row(y, b.var(self.bias))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::full(1, dim, 1.0));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, dim));
        Self { gain, bias }
    }

    pub fn forward(&self, tape: &mut Tape, b: &Binding, x: Var) -> Var {
        let n = tape.layer_norm_rows(x, Self::EPS);
        let n = tape.mul_row(n, b.var(self.gain));
        tape.add_row(n, b.var(self.bias))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Silu,
    Gelu,
}

/// Two linear layers with an activation between them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dims: (usize, usize, usize),
        activation: Activation,
    ) -> Self {
        let first = Linear::new(store, rng, &format!("{name}.0"), dims.0, dims.1);
        let second = Linear::new(store, rng, &format!("{name}.1"), dims.1, dims.2);
        Self { first, second, activation }
    }

    pub fn forward(&self, tape: &mut Tape, b: &Binding, x: Var) -> Var {
        let h = self.first.forward(tape, b, x);
        let h = match self.activation {
            Activation::Silu => tape.silu(h),
            Activation::Gelu => tape.gelu(h),
        };
        self.second.forward(tape, b, h)
    }
}

/// Multi-head scaled dot-product attention with separate query and
/// key/value inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        kv_dim: usize,
        heads: usize,
    ) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim must be divisible by heads");
        Self {
            query: Linear::new(store, rng, &format!("{name}.query"), dim, dim),
            key: Linear::new(store, rng, &format!("{name}.key"), kv_dim, dim),
            value: Linear::new(store, rng, &format!("{name}.value"), kv_dim, dim),
            output: Linear::new(store, rng, &format!("{name}.output"), dim, dim),
            heads,
        }
    }

    /// `queries` is `n x dim`, `context` is `m x kv_dim`. Keys whose
    /// `key_valid` entry is false receive zero attention weight.
    pub fn forward(
        &self,
        tape: &mut Tape,
        b: &Binding,
        queries: Var,
        context: Var,
        key_valid: Option<&[bool]>,
    ) -> Var {
        let q = self.query.forward(tape, b, queries);
        let k = self.key.forward(tape, b, context);
        let v = self.value.forward(tape, b, context);
        let dim = self.query.out_dim;
        let head_dim = dim / self.heads;
        let scale = 1.0 / libm::sqrt(head_dim as f64);
        let mask_row = key_valid.map(|valid| {
            let row = valid.iter().map(|&ok| if ok { 0.0 } else { f64::NEG_INFINITY }).collect();
            tape.constant(Tensor::row_vector(row))
        });

        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, h * head_dim, head_dim),
                    tape.slice_cols(k, h * head_dim, head_dim),
                    tape.slice_cols(v, h * head_dim, head_dim),
                )
            };
            let scores = tape.matmul_nt(qh, kh);
            let scores = tape.scale(scores, scale);
            let scores = match mask_row {
                Some(m) => tape.add_row(scores, m),
                None => scores,
            };
            let weights = tape.softmax_rows(scores);
            heads.push(tape.matmul(weights, vh));
        }
        let merged = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) };
        self.output.forward(tape, b, merged)
    }
}

/// Standard sinusoidal code: the first half of the channels are sines and
/// the second half cosines over geometrically spaced frequencies.
pub fn sinusoidal_code(position: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = libm::exp(-libm::log(10_000.0) * i as f64 / half.max(1) as f64);
        out[i] = libm::sin(position * freq);
        out[half + i] = libm::cos(position * freq);
    }
    out
}

/// `rows x dim` table of sinusoidal codes for positions `0..rows`.
pub fn sinusoidal_table(rows: usize, dim: usize) -> Tensor {
    let mut t = Tensor::zeros(rows, dim);
    for r in 0..rows {
        t.row_mut(r).copy_from_slice(&sinusoidal_code(r as f64, dim));
    }
    t
}
