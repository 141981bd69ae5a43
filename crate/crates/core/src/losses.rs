//! Differentiable loss terms over predicted pairs. Every term averages over
//! the valid (mask-on) elements only.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::batch::{LossMask, MotionPair};
use crate::error::{invalid, Error, Result};
use crate::evaluator::EvalModel;
use crate::motion::{SkeletonTopology, NUM_JOINTS};
use crate::nn::Binding;
use crate::tensor::Tensor;
use crate::text::TextFeatures;

pub const DEFAULT_CONTACT_THRESHOLD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub recon: f64,
    pub bone_length: f64,
    pub velocity: f64,
    pub distance_map: f64,
    pub joint_awareness: f64,
    pub text_fid: f64,
    pub motion_fid: f64,
    pub contact_threshold: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            recon: 1.0,
            bone_length: 0.5,
            velocity: 0.5,
            distance_map: 0.5,
            joint_awareness: 0.5,
            text_fid: 0.01,
            motion_fid: 0.01,
            contact_threshold: DEFAULT_CONTACT_THRESHOLD,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("recon", self.recon),
            ("bone_length", self.bone_length),
            ("velocity", self.velocity),
            ("distance_map", self.distance_map),
            ("joint_awareness", self.joint_awareness),
            ("text_fid", self.text_fid),
            ("motion_fid", self.motion_fid),
        ];
        for (name, w) in named {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::OutOfRange(format!("loss weight {name} = {w} must be finite and >= 0")));
            }
        }
        if !(self.contact_threshold > 0.0 && self.contact_threshold.is_finite()) {
            return Err(Error::OutOfRange(format!("contact_threshold {} must be positive", self.contact_threshold)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    First,
    Second,
}

/// Tape handles of the two predicted character tensors (`L x 34` each).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairVars {
    pub a: Var,
    pub b: Var,
}

impl PairVars {
    pub fn constant(tape: &mut Tape, pair: &MotionPair) -> Self {
        Self { a: tape.constant(pair.a.clone()), b: tape.constant(pair.b.clone()) }
    }

    pub fn param(tape: &mut Tape, pair: &MotionPair) -> Self {
        Self { a: tape.param(pair.a.clone()), b: tape.param(pair.b.clone()) }
    }

    pub fn value(&self, tape: &Tape) -> MotionPair {
        MotionPair { a: tape.value(self.a).clone(), b: tape.value(self.b).clone() }
    }
}

fn check(tape: &Tape, pred: PairVars, gt: &MotionPair, mask: &LossMask) -> Result<()> {
    let shape = gt.a.shape();
    if tape.value(pred.a).shape() != shape
        || tape.value(pred.b).shape() != shape
        || gt.b.shape() != shape
        || mask.weights[0].shape() != shape
        || mask.weights[1].shape() != shape
    {
        return Err(Error::Shape(format!(
            "prediction {:?}/{:?}, target {:?}, mask {:?}",
            tape.value(pred.a).shape(),
            tape.value(pred.b).shape(),
            shape,
            mask.weights[0].shape()
        )));
    }
    Ok(())
}

/// `sum(w * (x - target)^2) / sum(w)` over every `(x, target, w)` triple;
/// zero when no weight is set.
fn weighted_mse(tape: &mut Tape, parts: &[(Var, Tensor, Tensor)]) -> Var {
    let count: f64 = parts.iter().map(|(_, _, w)| w.sum()).sum();
    if count == 0.0 {
        return tape.constant(Tensor::scalar(0.0));
    }
    let mut total = None;
    for (x, target, w) in parts {
        let t = tape.constant(target.clone());
        let d = tape.sub(*x, t);
        let sq = tape.square(d);
        let wv = tape.constant(w.clone());
        let weighted = tape.mul(sq, wv);
        let s = tape.sum(weighted);
        total = Some(match total {
            None => s,
            Some(acc) => tape.add(acc, s),
        });
    }
    let total = total.expect("at least one part");
    tape.scale(total, 1.0 / count)
}

fn distances(x: &Tensor, pairs: &[(usize, usize)]) -> Tensor {
    Tensor::from_fn(x.rows(), pairs.len(), |r, k| {
        let (i, j) = pairs[k];
        let row = x.row(r);
        let dx = row[2 * i] - row[2 * j];
        let dy = row[2 * i + 1] - row[2 * j + 1];
        libm::sqrt(dx * dx + dy * dy)
    })
}

/// Joint validity as a `L x points` 0/1 table for the points of `weights`.
fn joint_table(weights: &[&Tensor]) -> Tensor {
    let rows = weights[0].rows();
    let per = NUM_JOINTS;
    Tensor::from_fn(rows, per * weights.len(), |r, p| weights[p / per].get(r, 2 * (p % per)))
}

fn pair_weights(joints: &Tensor, pairs: &[(usize, usize)]) -> Tensor {
    Tensor::from_fn(joints.rows(), pairs.len(), |r, k| joints.get(r, pairs[k].0) * joints.get(r, pairs[k].1))
}

/// Masked mean squared error between prediction and target.
pub fn recon_loss(tape: &mut Tape, pred: PairVars, gt: &MotionPair, mask: &LossMask) -> Result<Var> {
    check(tape, pred, gt, mask)?;
    Ok(weighted_mse(
        tape,
        &[(pred.a, gt.a.clone(), mask.weights[0].clone()), (pred.b, gt.b.clone(), mask.weights[1].clone())],
    ))
}

/// Mean over valid frames, characters and bones of the squared bone-length
/// difference. A bone counts when both of its joints are valid.
pub fn bone_length_loss(
    tape: &mut Tape,
    pred: PairVars,
    gt: &MotionPair,
    topology: &SkeletonTopology,
    mask: &LossMask,
) -> Result<Var> {
    check(tape, pred, gt, mask)?;
    let edges = topology.edges.to_vec();
    let mut parts = Vec::with_capacity(2);
    for (x, target, w) in [(pred.a, &gt.a, &mask.weights[0]), (pred.b, &gt.b, &mask.weights[1])] {
        let lengths = tape.point_distances(x, edges.clone());
        parts.push((lengths, distances(target, &edges), pair_weights(&joint_table(&[w]), &edges)));
    }
    Ok(weighted_mse(tape, &parts))
}

/// Masked squared error of first-order frame differences. A difference
/// counts when the coordinate is valid in both frames.
pub fn velocity_loss(tape: &mut Tape, pred: PairVars, gt: &MotionPair, mask: &LossMask) -> Result<Var> {
    check(tape, pred, gt, mask)?;
    let len = gt.frames();
    if len < 2 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let mut parts = Vec::with_capacity(2);
    for (x, target, w) in [(pred.a, &gt.a, &mask.weights[0]), (pred.b, &gt.b, &mask.weights[1])] {
        let later = tape.slice_rows(x, 1, len - 1);
        let earlier = tape.slice_rows(x, 0, len - 1);
        let v = tape.sub(later, earlier);
        let vg = target.slice_rows(1, len - 1).sub(&target.slice_rows(0, len - 1));
        let vw = w.slice_rows(1, len - 1).zip_map(&w.slice_rows(0, len - 1), |p, q| p * q);
        parts.push((v, vg, vw));
    }
    Ok(weighted_mse(tape, &parts))
}

fn all_pairs(points: usize) -> Vec<(usize, usize)> {
    (0..points).flat_map(|i| (i + 1..points).map(move |j| (i, j))).collect()
}

fn cross_pairs() -> Vec<(usize, usize)> {
    (0..NUM_JOINTS).flat_map(|i| (0..NUM_JOINTS).map(move |j| (i, NUM_JOINTS + j))).collect()
}

/// Per frame, the pairwise distances over all 34 joints of both characters;
/// masked squared error between predicted and target matrices, averaged
/// over the distinct off-diagonal entries.
pub fn distance_map_loss(tape: &mut Tape, pred: PairVars, gt: &MotionPair, mask: &LossMask) -> Result<Var> {
    check(tape, pred, gt, mask)?;
    let pairs = all_pairs(2 * NUM_JOINTS);
    let x = tape.concat_cols(&[pred.a, pred.b]);
    let d = tape.point_distances(x, pairs.clone());
    let target = distances(&gt.concat(), &pairs);
    let w = pair_weights(&joint_table(&[&mask.weights[0], &mask.weights[1]]), &pairs);
    Ok(weighted_mse(tape, &[(d, target, w)]))
}

/// The distance-map error restricted to cross-character joint pairs whose
/// target distance is below `contact_threshold`; zero without contacts.
pub fn joint_awareness_loss(
    tape: &mut Tape,
    pred: PairVars,
    gt: &MotionPair,
    mask: &LossMask,
    contact_threshold: f64,
) -> Result<Var> {
    check(tape, pred, gt, mask)?;
    if !(contact_threshold > 0.0) {
        return Err(invalid!("contact threshold must be positive, got {contact_threshold}"));
    }
    let pairs = cross_pairs();
    let x = tape.concat_cols(&[pred.a, pred.b]);
    let d = tape.point_distances(x, pairs.clone());
    let target = distances(&gt.concat(), &pairs);
    let valid = pair_weights(&joint_table(&[&mask.weights[0], &mask.weights[1]]), &pairs);
    let w = valid.zip_map(&target, |v, dist| if dist < contact_threshold { v } else { 0.0 });
    Ok(weighted_mse(tape, &[(d, target, w)]))
}

/// `1 - cos(x, y)`; rejects zero-norm embeddings.
pub fn embedding_gap(tape: &mut Tape, x: Var, y: Var) -> Result<Var> {
    for (name, v) in [("first", x), ("second", y)] {
        let norm = tape.value(v).frobenius_norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(invalid!("{name} embedding has norm {norm}; cosine similarity is undefined"));
        }
    }
    if tape.value(x).shape() != tape.value(y).shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", tape.value(x).shape(), tape.value(y).shape())));
    }
    let cos = tape.cosine(x, y);
    let neg = tape.scale(cos, -1.0);
    let one = tape.constant(Tensor::scalar(1.0));
    Ok(tape.add(one, neg))
}

/// Gap between the evaluator's caption embedding and its embedding of the
/// prediction. `eval_binding` should be frozen.
pub fn text_fid_loss(
    tape: &mut Tape,
    eval: &EvalModel,
    eval_binding: &Binding,
    text: &TextFeatures,
    pred: PairVars,
    frames: &[bool],
) -> Result<Var> {
    if text.dim() != eval.text_dim() {
        return Err(Error::Shape(format!("text width {} vs evaluator {}", text.dim(), eval.text_dim())));
    }
    check_frames(tape, pred, frames)?;
    let t = eval.encode_text(tape, eval_binding, &text.pooled);
    let m = tape.concat_cols(&[pred.a, pred.b]);
    let m = eval.encode_motion(tape, eval_binding, m, frames);
    embedding_gap(tape, t, m)
}

/// Gap between the evaluator's embeddings of the target and of the
/// prediction. Only the prediction side carries gradient.
pub fn motion_fid_loss(
    tape: &mut Tape,
    eval: &EvalModel,
    eval_binding: &Binding,
    gt: &MotionPair,
    pred: PairVars,
    frames: &[bool],
) -> Result<Var> {
    check_frames(tape, pred, frames)?;
    if gt.a.shape() != tape.value(pred.a).shape() {
        return Err(Error::Shape(format!("target {:?} vs prediction {:?}", gt.a.shape(), tape.value(pred.a).shape())));
    }
    let g = tape.constant(gt.concat());
    let g = eval.encode_motion(tape, eval_binding, g, frames);
    let m = tape.concat_cols(&[pred.a, pred.b]);
    let m = eval.encode_motion(tape, eval_binding, m, frames);
    embedding_gap(tape, g, m)
}

fn check_frames(tape: &Tape, pred: PairVars, frames: &[bool]) -> Result<()> {
    let rows = tape.value(pred.a).rows();
    if frames.len() != rows || tape.value(pred.b).rows() != rows {
        return Err(Error::Shape(format!("{} validity flags for {rows} frames", frames.len())));
    }
    if !frames.iter().any(|&f| f) {
        return Err(invalid!("no valid frames"));
    }
    Ok(())
}

/// Tape handles of every loss component.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossTerms {
    pub recon: Var,
    pub bone_length: Var,
    pub velocity: Var,
    pub distance_map: Var,
    pub joint_awareness: Var,
    pub text_fid: Option<Var>,
    pub motion_fid: Option<Var>,
}

/// Scalar values of every component, for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub recon: f64,
    pub bone_length: f64,
    pub velocity: f64,
    pub distance_map: f64,
    pub joint_awareness: f64,
    pub text_fid: Option<f64>,
    pub motion_fid: Option<f64>,
}

impl LossTerms {
    /// The five first-stage components.
    pub fn first_stage(
        tape: &mut Tape,
        pred: PairVars,
        gt: &MotionPair,
        mask: &LossMask,
        topology: &SkeletonTopology,
        contact_threshold: f64,
    ) -> Result<Self> {
        Ok(Self {
            recon: recon_loss(tape, pred, gt, mask)?,
            bone_length: bone_length_loss(tape, pred, gt, topology, mask)?,
            velocity: velocity_loss(tape, pred, gt, mask)?,
            distance_map: distance_map_loss(tape, pred, gt, mask)?,
            joint_awareness: joint_awareness_loss(tape, pred, gt, mask, contact_threshold)?,
            text_fid: None,
            motion_fid: None,
        })
    }

    pub fn values(&self, tape: &Tape, total: Var) -> LossValues {
        let v = |x: Var| tape.value(x).item();
        LossValues {
            total: v(total),
            recon: v(self.recon),
            bone_length: v(self.bone_length),
            velocity: v(self.velocity),
            distance_map: v(self.distance_map),
            joint_awareness: v(self.joint_awareness),
            text_fid: self.text_fid.map(v),
            motion_fid: self.motion_fid.map(v),
        }
    }
}

/// Weighted sum of the components. The first stage uses the five motion
/// terms; the second adds the two evaluator terms. Zero-weighted terms are
/// left out of the graph.
pub fn total_loss(tape: &mut Tape, stage: Stage, terms: &LossTerms, weights: &LossWeights) -> Result<Var> {
    weights.validate()?;
    let mut weighted: Vec<(f64, Var)> = alloc::vec![
        (weights.bone_length, terms.bone_length),
        (weights.velocity, terms.velocity),
        (weights.distance_map, terms.distance_map),
        (weights.joint_awareness, terms.joint_awareness),
        (weights.recon, terms.recon),
    ];
    if stage == Stage::Second {
        for (name, w, term) in [("text_fid", weights.text_fid, terms.text_fid), ("motion_fid", weights.motion_fid, terms.motion_fid)] {
            if w > 0.0 {
                let term = term.ok_or_else(|| invalid!("{name} has weight {w} but was not computed"))?;
                weighted.push((w, term));
            }
        }
    }
    let mut total = tape.constant(Tensor::scalar(0.0));
    for (w, term) in weighted {
        if w == 0.0 {
            continue;
        }
        let scaled = if w == 1.0 { term } else { tape.scale(term, w) };
        total = tape.add(total, scaled);
    }
    Ok(total)
}
