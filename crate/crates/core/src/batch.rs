//! Conversion between [`MotionSample`]s and the per-character model tensors,
//! with padding to a fixed length and validity masks.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::motion::{
    CharacterTrack, Keypoint, MotionSample, Pose, COORDS_PER_CHARACTER, MAX_FRAMES, NUM_JOINTS,
};
use crate::tensor::Tensor;

/// Both characters of a sample as `frames x 34` tensors (x, y per joint).
#[derive(Clone, Debug, PartialEq)]
pub struct MotionPair {
    pub a: Tensor,
    pub b: Tensor,
}

impl MotionPair {
    pub fn new(a: Tensor, b: Tensor) -> Result<Self> {
        if a.shape() != b.shape() || a.cols() != COORDS_PER_CHARACTER {
            return Err(invalid!(
                "pair tensors must both be Lx{COORDS_PER_CHARACTER}, found {:?} and {:?}",
                a.shape(),
                b.shape()
            ));
        }
        Ok(Self { a, b })
    }

    pub fn zeros(frames: usize) -> Self {
        Self {
            a: Tensor::zeros(frames, COORDS_PER_CHARACTER),
            b: Tensor::zeros(frames, COORDS_PER_CHARACTER),
        }
    }

    pub fn frames(&self) -> usize {
        self.a.rows()
    }

    pub fn swapped(&self) -> Self {
        Self { a: self.b.clone(), b: self.a.clone() }
    }

    /// Characters side by side: `frames x 68`.
    pub fn concat(&self) -> Tensor {
        Tensor::hstack(&[&self.a, &self.b])
    }

    pub fn map(&self, f: impl Fn(&Tensor) -> Tensor) -> Self {
        Self { a: f(&self.a), b: f(&self.b) }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(&Tensor, &Tensor) -> Tensor) -> Self {
        Self { a: f(&self.a, &other.a), b: f(&self.b, &other.b) }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.a.max_abs_diff(&other.a).max(self.b.max_abs_diff(&other.b))
    }

    pub fn max_abs(&self) -> f64 {
        self.a.max_abs().max(self.b.max_abs())
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite()
    }

    /// First frame of each character, the reference-motion input.
    pub fn first_frames(&self) -> ReferenceFrames {
        ReferenceFrames { a: self.a.slice_rows(0, 1), b: self.b.slice_rows(0, 1) }
    }
}

/// First-frame poses of both characters, each `1 x 34`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceFrames {
    pub a: Tensor,
    pub b: Tensor,
}

impl ReferenceFrames {
    pub fn swapped(&self) -> Self {
        Self { a: self.b.clone(), b: self.a.clone() }
    }
}

/// Frame validity plus per-coordinate loss weights for both characters.
#[derive(Clone, Debug, PartialEq)]
pub struct LossMask {
    pub frames: Vec<bool>,
    /// `frames x 34` weights in {0, 1}: frame valid and joint observed.
    pub weights: [Tensor; 2],
}

impl LossMask {
    /// Every joint of the first `valid` frames counts; the rest is padding.
    pub fn prefix(total: usize, valid: usize) -> Self {
        let frames: Vec<bool> = (0..total).map(|f| f < valid).collect();
        let w = Tensor::from_fn(total, COORDS_PER_CHARACTER, |r, _| if r < valid { 1.0 } else { 0.0 });
        Self { frames, weights: [w.clone(), w] }
    }

    pub fn all_valid(total: usize) -> Self {
        Self::prefix(total, total)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn valid_frames(&self) -> usize {
        self.frames.iter().filter(|&&v| v).count()
    }

    /// Whether joint `joint` of character `character` counts at `frame`.
    pub fn joint_valid(&self, character: usize, frame: usize, joint: usize) -> bool {
        self.weights[character].get(frame, 2 * joint) > 0.0
    }

    pub fn swapped(&self) -> Self {
        Self { frames: self.frames.clone(), weights: [self.weights[1].clone(), self.weights[0].clone()] }
    }
}

/// Pack one pose as 34 interleaved coordinates.
pub fn pose_to_row(pose: &Pose) -> [f64; COORDS_PER_CHARACTER] {
    let mut row = [0.0; COORDS_PER_CHARACTER];
    for (j, k) in pose.keypoints.iter().enumerate() {
        row[2 * j] = k.x;
        row[2 * j + 1] = k.y;
    }
    row
}

fn track_tensor(track: &CharacterTrack, total: usize) -> Tensor {
    let mut t = Tensor::zeros(total, COORDS_PER_CHARACTER);
    for (f, pose) in track.frames.iter().enumerate() {
        t.row_mut(f).copy_from_slice(&pose_to_row(pose));
    }
    t
}

fn track_weights(track: &CharacterTrack, total: usize) -> Tensor {
    let mut w = Tensor::zeros(total, COORDS_PER_CHARACTER);
    for (f, pose) in track.frames.iter().enumerate() {
        for (j, k) in pose.keypoints.iter().enumerate() {
            if k.confidence > 0.0 {
                w.set(f, 2 * j, 1.0);
                w.set(f, 2 * j + 1, 1.0);
            }
        }
    }
    w
}

/// Convert a (normalized) sample into model tensors. Single-character
/// samples are replicated into a pair. `pad_to` extends the sequence with
/// zero frames that are masked out.
pub fn prepare_pair(sample: &MotionSample, pad_to: Option<usize>) -> Result<(MotionPair, LossMask)> {
    let len = sample.len();
    if len == 0 || sample.tracks.iter().any(|t| t.len() != len) {
        return Err(invalid!("sample {} has empty or unequal tracks", sample.source_id));
    }
    let total = pad_to.unwrap_or(len);
    if total < len || total > MAX_FRAMES {
        return Err(invalid!("cannot pad {len} frames to {total} (maximum {MAX_FRAMES})"));
    }
    let (first, second) = match sample.tracks.as_slice() {
        [only] => (only, only),
        [a, b] => (a, b),
        other => return Err(invalid!("expected 1 or 2 tracks, found {}", other.len())),
    };
    let pair = MotionPair { a: track_tensor(first, total), b: track_tensor(second, total) };
    let frames = (0..total).map(|f| f < len).collect();
    let mask = LossMask { frames, weights: [track_weights(first, total), track_weights(second, total)] };
    Ok((pair, mask))
}

fn tensor_to_track(t: &Tensor, frames: usize) -> CharacterTrack {
    let poses = (0..frames)
        .map(|f| {
            let row = t.row(f);
            let mut kps = [Keypoint::new(0.0, 0.0, 1.0); NUM_JOINTS];
            for (j, k) in kps.iter_mut().enumerate() {
                k.x = row[2 * j];
                k.y = row[2 * j + 1];
            }
            Pose::new(kps)
        })
        .collect();
    CharacterTrack::new(poses)
}

/// Build a sample (in model coordinates) from generated tensors. Generated
/// keypoints carry confidence 1. With `person_count == 1` only the first
/// character is kept.
pub fn pair_to_sample(
    pair: &MotionPair,
    frames: usize,
    person_count: u8,
    source_id: &str,
    caption: &str,
    frame_size: (f64, f64),
) -> Result<MotionSample> {
    if frames == 0 || frames > pair.frames() {
        return Err(invalid!("cannot take {frames} frames from a {}-frame pair", pair.frames()));
    }
    let tracks = match person_count {
        1 => vec![tensor_to_track(&pair.a, frames)],
        2 => vec![tensor_to_track(&pair.a, frames), tensor_to_track(&pair.b, frames)],
        n => return Err(invalid!("person_count must be 1 or 2, found {n}")),
    };
    Ok(MotionSample {
        source_id: String::from(source_id),
        caption: String::from(caption),
        person_count,
        replicated: false,
        frame_size,
        tracks,
    })
}
