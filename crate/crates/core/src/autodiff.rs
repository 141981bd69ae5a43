//! A small reverse-mode automatic differentiation tape over [`Tensor`]s.
//!
//! Every forward computation appends nodes to a [`Tape`]; [`Tape::backward`]
//! walks the nodes in reverse and accumulates gradients for every node that
//! transitively depends on a trainable leaf. Shape errors inside the tape are
//! programming errors and panic; public model entry points validate their
//! inputs before building a graph.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    ScaleRows(Var, Vec<f64>),
    Transpose(Var),
    Exp(Var),
    Square(Var),
    Silu(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNormRows(Var, Vec<f64>),
    NormalizeRows(Var, Vec<f64>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Sum(Var),
    PointDistances(Var, Vec<(usize, usize)>),
    Cosine(Var, Var),
    CrossEntropyRows(Var, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A trainable leaf; gradients are reported for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul(a, b), rg)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_nt(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMulNt(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).add(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).sub(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    /// `x + row` with `row` (1 x cols) broadcast over every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (xv, rv) = (self.value(x), self.value(row));
        assert_eq!((1, xv.cols()), rv.shape(), "add_row expects a 1xC row");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        self.push(out, Op::AddRow(x, row), rg)
    }

    /// `x * row` with `row` (1 x cols) broadcast over every row of `x`.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Var {
        let (xv, rv) = (self.value(x), self.value(row));
        assert_eq!((1, xv.cols()), rv.shape(), "mul_row expects a 1xC row");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(rv.data()) {
                *o *= b;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        self.push(out, Op::MulRow(x, row), rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).scale(s);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, s), rg)
    }

    /// Multiply every element of `x` by the 1x1 variable `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Var {
        assert_eq!(self.value(s).shape(), (1, 1), "scale_by expects a 1x1 scale");
        let sv = self.value(s).item();
        let out = self.value(x).scale(sv);
        let rg = self.rg(x) || self.rg(s);
        self.push(out, Op::ScaleBy(x, s), rg)
    }

    /// Multiply row `r` of `x` by the constant `weights[r]`.
    pub fn scale_rows(&mut self, x: Var, weights: Vec<f64>) -> Var {
        let xv = self.value(x);
        assert_eq!(weights.len(), xv.rows(), "scale_rows weight count");
        let mut out = xv.clone();
        for (r, w) in weights.iter().enumerate() {
            for o in out.row_mut(r) {
                *o *= w;
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::ScaleRows(x, weights), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        let rg = self.rg(x);
        self.push(out, Op::Transpose(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(libm::exp);
        let rg = self.rg(x);
        self.push(out, Op::Exp(x), rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        let rg = self.rg(x);
        self.push(out, Op::Square(x), rg)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * sigmoid(v));
        let rg = self.rg(x);
        self.push(out, Op::Silu(x), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .map(|v| 0.5 * v * (1.0 + libm::tanh(GELU_C * (v + 0.044715 * v * v * v))));
        let rg = self.rg(x);
        self.push(out, Op::Gelu(x), rg)
    }

    /// Row-wise softmax. Entries equal to `-inf` get probability zero; a row
    /// that is entirely `-inf` yields all zeros.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = Tensor::zeros(xv.rows(), xv.cols());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let orow = out.row_mut(r);
            let mut total = 0.0;
            for (o, &v) in orow.iter_mut().zip(row) {
                let e = if v == f64::NEG_INFINITY { 0.0 } else { libm::exp(v - max) };
                *o = e;
                total += e;
            }
            for o in orow.iter_mut() {
                *o /= total;
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::SoftmaxRows(x), rg)
    }

    /// Normalize every row to zero mean and unit variance (no affine part).
    pub fn layer_norm_rows(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let n = xv.cols() as f64;
        let mut out = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / libm::sqrt(var + eps);
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
        }
        let rg = self.rg(x);
        self.push(out, Op::LayerNormRows(x, inv_std), rg)
    }

    /// Scale every row to unit Euclidean norm. Zero rows stay zero.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = xv.clone();
        let mut norms = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = out.row_mut(r);
            let norm = libm::sqrt(row.iter().map(|v| v * v).sum());
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v /= norm;
                }
            }
            norms.push(norm);
        }
        let rg = self.rg(x);
        self.push(out, Op::NormalizeRows(x, norms), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let values: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let out = Tensor::vstack(&values);
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(out, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let values: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let out = Tensor::hstack(&values);
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(out, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x).slice_rows(start, len);
        let rg = self.rg(x);
        self.push(out, Op::SliceRows(x, start), rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x).slice_cols(start, len);
        let rg = self.rg(x);
        self.push(out, Op::SliceCols(x, start), rg)
    }

    /// Sum of all elements as a 1x1 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::Sum(x), rg)
    }

    /// Per-row Euclidean distances between 2-D points packed as
    /// `[x0, y0, x1, y1, ...]`. Output column `k` holds the distance between
    /// points `pairs[k].0` and `pairs[k].1`.
    pub fn point_distances(&mut self, x: Var, pairs: Vec<(usize, usize)>) -> Var {
        let xv = self.value(x);
        let npts = xv.cols() / 2;
        assert!(pairs.iter().all(|&(i, j)| i < npts && j < npts), "point index out of range");
        let mut out = Tensor::zeros(xv.rows(), pairs.len());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let orow = out.row_mut(r);
            for (o, &(i, j)) in orow.iter_mut().zip(&pairs) {
                let dx = row[2 * i] - row[2 * j];
                let dy = row[2 * i + 1] - row[2 * j + 1];
                *o = libm::sqrt(dx * dx + dy * dy);
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::PointDistances(x, pairs), rg)
    }

    /// Cosine similarity of two equally shaped tensors, flattened, as 1x1.
    /// Both operands must have nonzero norm.
    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "cosine shape mismatch");
        let dot: f64 = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).sum();
        let na = av.frobenius_norm();
        let nb = bv.frobenius_norm();
        assert!(na > 0.0 && nb > 0.0, "cosine of a zero vector");
        let out = Tensor::scalar(dot / (na * nb));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Cosine(a, b), rg)
    }

    /// Mean over rows of `logsumexp(row) - row[target]`.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: Vec<usize>) -> Var {
        let lv = self.value(logits);
        assert_eq!(targets.len(), lv.rows(), "one target per row");
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
            total += lse - row[t];
        }
        let out = Tensor::scalar(total / lv.rows() as f64);
        let rg = self.rg(logits);
        self.push(out, Op::CrossEntropyRows(logits, targets), rg)
    }

    /// Reverse pass from a scalar (1x1) output.
    pub fn backward(&self, output: Var) -> Grads {
        assert_eq!(self.value(output).shape(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.matmul_nt(self.value(*b)));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, self.value(*a).matmul_tn(g));
                }
            }
            Op::MatMulNt(a, b) => {
                // out = A B^T: dA = G B, dB = G^T A
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.matmul(self.value(*b)));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.matmul_tn(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::AddRow(x, row) => {
                self.accumulate(grads, *x, g.clone());
                if self.rg(*row) {
                    self.accumulate(grads, *row, column_sums(g));
                }
            }
            Op::MulRow(x, row) => {
                let rv = self.value(*row);
                if self.rg(*x) {
                    let mut gx = g.clone();
                    for r in 0..gx.rows() {
                        for (o, b) in gx.row_mut(r).iter_mut().zip(rv.data()) {
                            *o *= b;
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.rg(*row) {
                    self.accumulate(grads, *row, column_sums(&g.zip_map(self.value(*x), |a, b| a * b)));
                }
            }
            Op::Scale(x, s) => self.accumulate(grads, *x, g.scale(*s)),
            Op::ScaleBy(x, s) => {
                if self.rg(*x) {
                    self.accumulate(grads, *x, g.scale(self.value(*s).item()));
                }
                if self.rg(*s) {
                    let d: f64 = g.data().iter().zip(self.value(*x).data()).map(|(a, b)| a * b).sum();
                    self.accumulate(grads, *s, Tensor::scalar(d));
                }
            }
            Op::ScaleRows(x, w) => {
                let mut gx = g.clone();
                for (r, wr) in w.iter().enumerate() {
                    for o in gx.row_mut(r) {
                        *o *= wr;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Transpose(x) => self.accumulate(grads, *x, g.transpose()),
            Op::Exp(x) => self.accumulate(grads, *x, g.zip_map(&node.value, |a, e| a * e)),
            Op::Square(x) => self.accumulate(grads, *x, g.zip_map(self.value(*x), |a, v| 2.0 * a * v)),
            Op::Silu(x) => {
                let gx = g.zip_map(self.value(*x), |a, v| {
                    let s = sigmoid(v);
                    a * (s + v * s * (1.0 - s))
                });
                self.accumulate(grads, *x, gx);
            }
            Op::Gelu(x) => {
                let gx = g.zip_map(self.value(*x), |a, v| {
                    let inner = GELU_C * (v + 0.044715 * v * v * v);
                    let th = libm::tanh(inner);
                    let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
                    a * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * dinner)
                });
                self.accumulate(grads, *x, gx);
            }
            Op::SoftmaxRows(x) => {
                let p = &node.value;
                let mut gx = Tensor::zeros(p.rows(), p.cols());
                for r in 0..p.rows() {
                    let (pr, gr) = (p.row(r), g.row(r));
                    let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &pv), &gv) in gx.row_mut(r).iter_mut().zip(pr).zip(gr) {
                        *o = pv * (gv - dot);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::LayerNormRows(x, inv_std) => {
                let y = &node.value;
                let n = y.cols() as f64;
                let mut gx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let mean_g = gr.iter().sum::<f64>() / n;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                    for ((o, &yv), &gv) in gx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = inv_std[r] * (gv - mean_g - yv * mean_gy);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::NormalizeRows(x, norms) => {
                let y = &node.value;
                let mut gx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    if norms[r] == 0.0 {
                        continue;
                    }
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in gx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = (gv - yv * dot) / norms[r];
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let rows = self.value(*p).rows();
                    if self.rg(*p) {
                        self.accumulate(grads, *p, g.slice_rows(start, rows));
                    }
                    start += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let cols = self.value(*p).cols();
                    if self.rg(*p) {
                        self.accumulate(grads, *p, g.slice_cols(start, cols));
                    }
                    start += cols;
                }
            }
            Op::SliceRows(x, start) => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    gx.row_mut(start + r).copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *x, gx);
            }
            Op::SliceCols(x, start) => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    gx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, Tensor::full(xv.rows(), xv.cols(), g.item()));
            }
            Op::PointDistances(x, pairs) => {
                let xv = self.value(*x);
                let d = &node.value;
                let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    let row = xv.row(r);
                    let (dr, gr) = (d.row(r), g.row(r));
                    let grow = gx.row_mut(r);
                    for (k, &(i, j)) in pairs.iter().enumerate() {
                        // the distance is not differentiable at zero; use the zero subgradient
                        if dr[k] == 0.0 {
                            continue;
                        }
                        let s = gr[k] / dr[k];
                        let dx = (row[2 * i] - row[2 * j]) * s;
                        let dy = (row[2 * i + 1] - row[2 * j + 1]) * s;
                        grow[2 * i] += dx;
                        grow[2 * i + 1] += dy;
                        grow[2 * j] -= dx;
                        grow[2 * j + 1] -= dy;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Cosine(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let c = node.value.item();
                let na = av.frobenius_norm();
                let nb = bv.frobenius_norm();
                let gs = g.item();
                if self.rg(*a) {
                    let ga = bv.zip_map(av, |bb, aa| gs * (bb / (na * nb) - c * aa / (na * na)));
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = av.zip_map(bv, |aa, bb| gs * (aa / (na * nb) - c * bb / (nb * nb)));
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::CrossEntropyRows(x, targets) => {
                let lv = self.value(*x);
                let n = lv.rows() as f64;
                let gs = g.item();
                let mut gx = Tensor::zeros(lv.rows(), lv.cols());
                for (r, &t) in targets.iter().enumerate() {
                    let row = lv.row(r);
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let total: f64 = row.iter().map(|v| libm::exp(v - max)).sum();
                    let grow = gx.row_mut(r);
                    for (o, &v) in grow.iter_mut().zip(row) {
                        *o = gs * libm::exp(v - max) / total / n;
                    }
                    grow[t] -= gs / n;
                }
                self.accumulate(grads, *x, gx);
            }
        }
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}


#[cfg(test)]
mod tests {
    use super::gradcheck::max_rel_error;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, 3, 4);
        let w = rand_tensor(&mut rng, 4, 5);
        let row = rand_tensor(&mut rng, 1, 4);
        let wv = w.clone();
        let checks: Vec<(&str, f64)> = vec![
            ("matmul", max_rel_error(&x, |t, v| {
                let w = t.constant(wv.clone());
                let y = t.matmul(v, w);
                let y = t.square(y);
                t.sum(y)
            })),
            ("matmul_nt", max_rel_error(&x, |t, v| {
                let y = t.matmul_nt(v, v);
                let y = t.gelu(y);
                t.sum(y)
            })),
            ("softmax", max_rel_error(&x, |t, v| {
                let s = t.softmax_rows(v);
                let s2 = t.mul(s, v);
                t.sum(s2)
            })),
            ("layer_norm", max_rel_error(&x, |t, v| {
                let n = t.layer_norm_rows(v, 1e-5);
                let r = t.constant(row.clone());
                let n = t.mul_row(n, r);
                let n = t.silu(n);
                t.sum(n)
            })),
            ("normalize_rows", max_rel_error(&x, |t, v| {
                let n = t.normalize_rows(v);
                let e = t.exp(n);
                t.sum(e)
            })),
            ("broadcast_rows", max_rel_error(&row, |t, r| {
                let x = t.constant(x.clone());
                let y = t.add_row(x, r);
                let y = t.mul_row(y, r);
                let y = t.square(y);
                t.sum(y)
            })),
            ("slice_concat", max_rel_error(&x, |t, v| {
                let a = t.slice_cols(v, 1, 2);
                let b = t.slice_rows(v, 0, 2);
                let bt = t.transpose(b);
                let c = t.concat_rows(&[bt, bt]);
                let d = t.concat_cols(&[a, a, v]);
                let c = t.square(c);
                let d = t.scale(d, 0.3);
                let d = t.square(d);
                let s1 = t.sum(c);
                let s2 = t.sum(d);
                t.sub(s1, s2)
            })),
            ("distances", max_rel_error(&x, |t, v| {
                let d = t.point_distances(v, vec![(0, 1), (1, 0), (0, 1)]);
                let d = t.scale_rows(d, vec![1.0, 0.5, 2.0]);
                let d = t.square(d);
                t.sum(d)
            })),
            ("cosine", max_rel_error(&x, |t, v| {
                let other = t.constant(x.map(|a| a * a - 0.2));
                t.cosine(v, other)
            })),
            ("cross_entropy", max_rel_error(&x, |t, v| t.cross_entropy_rows(v, vec![0, 3, 2]))),
            ("scale_by", max_rel_error(&Tensor::scalar(0.7), |t, s| {
                let x = t.constant(x.clone());
                let y = t.scale_by(x, s);
                let y = t.exp(y);
                t.sum(y)
            })),
        ];
        for (name, err) in checks {
            assert!(err < 1e-6, "{name}: relative error {err}");
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::scalar(2.0));
        let p = t.param(Tensor::scalar(3.0));
        let y = t.mul(c, p);
        let g = t.backward(y);
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap().item(), 2.0);
    }

    #[test]
    fn fully_masked_softmax_row_is_zero() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_vec(1, 2, vec![f64::NEG_INFINITY; 2]).unwrap());
        let s = t.softmax_rows(x);
        assert_eq!(t.value(s).data(), &[0.0, 0.0]);
    }
}
