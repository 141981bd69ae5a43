//! Skeleton motion data model: COCO-17 keypoints, character tracks, and
//! multi-character samples, plus the geometric primitives used by cleaning
//! and by the losses.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const NUM_JOINTS: usize = 17;
/// Nose, eyes and ears.
pub const FACE_JOINTS: [usize; 5] = [0, 1, 2, 3, 4];
pub const MAX_FRAMES: usize = 300;
/// x and y of every joint of one character.
pub const COORDS_PER_CHARACTER: usize = 2 * NUM_JOINTS;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl Keypoint {
    pub const fn new(x: f64, y: f64, confidence: f64) -> Self {
        Self { x, y, confidence }
    }
}

/// One character at one frame, 17 keypoints in COCO order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub keypoints: [Keypoint; NUM_JOINTS],
}

impl Pose {
    pub fn new(keypoints: [Keypoint; NUM_JOINTS]) -> Self {
        Self { keypoints }
    }

    pub fn uniform(x: f64, y: f64, confidence: f64) -> Self {
        Self { keypoints: [Keypoint::new(x, y, confidence); NUM_JOINTS] }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let mut out = *self;
        for k in &mut out.keypoints {
            k.x += dx;
            k.y += dy;
        }
        out
    }

    pub fn mean_confidence(&self) -> f64 {
        self.keypoints.iter().map(|k| k.confidence).sum::<f64>() / NUM_JOINTS as f64
    }

    pub fn mean_face_confidence(&self) -> f64 {
        FACE_JOINTS.iter().map(|&j| self.keypoints[j].confidence).sum::<f64>() / FACE_JOINTS.len() as f64
    }
}

/// Bones of the skeleton as (parent, child) joint pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SkeletonTopology {
    pub edges: &'static [(usize, usize)],
    pub face_indices: &'static [usize],
}

/// The 19 limbs of the COCO-17 convention.
pub const COCO17_EDGES: [(usize, usize); 19] = [
    (15, 13),
    (13, 11),
    (16, 14),
    (14, 12),
    (11, 12),
    (5, 11),
    (6, 12),
    (5, 6),
    (5, 7),
    (6, 8),
    (7, 9),
    (8, 10),
    (1, 2),
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (3, 5),
    (4, 6),
];

impl SkeletonTopology {
    pub const fn coco17() -> Self {
        Self { edges: &COCO17_EDGES, face_indices: &FACE_JOINTS }
    }
}

impl Default for SkeletonTopology {
    fn default() -> Self {
        Self::coco17()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CharacterTrack {
    pub frames: Vec<Pose>,
}

impl CharacterTrack {
    pub fn new(frames: Vec<Pose>) -> Self {
        Self { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionSample {
    pub source_id: String,
    pub caption: String,
    pub person_count: u8,
    pub replicated: bool,
    /// Original frame (width, height) in pixels.
    pub frame_size: (f64, f64),
    pub tracks: Vec<CharacterTrack>,
}

impl MotionSample {
    pub fn len(&self) -> usize {
        self.tracks.first().map_or(0, CharacterTrack::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn map_coords(&self, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let mut out = self.clone();
        for track in &mut out.tracks {
            for pose in &mut track.frames {
                for k in &mut pose.keypoints {
                    let (x, y) = f(k.x, k.y);
                    k.x = x;
                    k.y = y;
                }
            }
        }
        out
    }
}

/// A broken invariant found by [`validate_sample`].
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    TrackCount(usize),
    EmptyTrack { track: usize },
    TrackTooLong { track: usize, len: usize },
    UnequalTrackLengths(Vec<usize>),
    PersonCount(u8),
    PersonCountMismatch { person_count: u8, tracks: usize, replicated: bool },
    ReplicatedTracksDiffer,
    ConfidenceOutOfRange { track: usize, frame: usize, joint: usize, value: f64 },
    NonFinite { track: usize, frame: usize, joint: usize },
    FrameSize { width: f64, height: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TrackCount(n) => write!(f, "expected 1 or 2 tracks, found {n}"),
            Self::EmptyTrack { track } => write!(f, "track {track} has no frames"),
            Self::TrackTooLong { track, len } => {
                write!(f, "track {track} has {len} frames (maximum {MAX_FRAMES})")
            }
            Self::UnequalTrackLengths(lens) => write!(f, "unequal track lengths {lens:?}"),
            Self::PersonCount(n) => write!(f, "person_count must be 1 or 2, found {n}"),
            Self::PersonCountMismatch { person_count, tracks, replicated } => write!(
                f,
                "person_count {person_count} inconsistent with {tracks} tracks (replicated = {replicated})"
            ),
            Self::ReplicatedTracksDiffer => write!(f, "replicated sample has differing tracks"),
            Self::ConfidenceOutOfRange { track, frame, joint, value } => write!(
                f,
                "confidence out of range: {value} at track {track} frame {frame} joint {joint}"
            ),
            Self::NonFinite { track, frame, joint } => {
                write!(f, "non-finite coordinate at track {track} frame {frame} joint {joint}")
            }
            Self::FrameSize { width, height } => write!(f, "frame size must be positive, found {width}x{height}"),
        }
    }
}

/// Check every structural invariant of a sample. An empty list means valid.
pub fn validate_sample(sample: &MotionSample) -> Vec<Violation> {
    let mut out = Vec::new();
    let n_tracks = sample.tracks.len();
    if !(1..=2).contains(&n_tracks) {
        out.push(Violation::TrackCount(n_tracks));
    }
    for (i, track) in sample.tracks.iter().enumerate() {
        if track.is_empty() {
            out.push(Violation::EmptyTrack { track: i });
        } else if track.len() > MAX_FRAMES {
            out.push(Violation::TrackTooLong { track: i, len: track.len() });
        }
    }
    let lens: Vec<usize> = sample.tracks.iter().map(CharacterTrack::len).collect();
    if lens.windows(2).any(|w| w[0] != w[1]) {
        out.push(Violation::UnequalTrackLengths(lens));
    }
    match sample.person_count {
        1 => {
            let expected = if sample.replicated { 2 } else { 1 };
            if n_tracks != expected {
                out.push(Violation::PersonCountMismatch {
                    person_count: 1,
                    tracks: n_tracks,
                    replicated: sample.replicated,
                });
            }
        }
        2 => {
            if n_tracks != 2 || sample.replicated {
                out.push(Violation::PersonCountMismatch {
                    person_count: 2,
                    tracks: n_tracks,
                    replicated: sample.replicated,
                });
            }
        }
        n => out.push(Violation::PersonCount(n)),
    }
    if sample.replicated && n_tracks == 2 && sample.tracks[0] != sample.tracks[1] {
        out.push(Violation::ReplicatedTracksDiffer);
    }
    for (ti, track) in sample.tracks.iter().enumerate() {
        for (fi, pose) in track.frames.iter().enumerate() {
            for (ji, k) in pose.keypoints.iter().enumerate() {
                if !(k.x.is_finite() && k.y.is_finite()) {
                    out.push(Violation::NonFinite { track: ti, frame: fi, joint: ji });
                }
                if !(0.0..=1.0).contains(&k.confidence) {
                    out.push(Violation::ConfidenceOutOfRange { track: ti, frame: fi, joint: ji, value: k.confidence });
                }
            }
        }
    }
    let (w, h) = sample.frame_size;
    if !(w > 0.0 && h > 0.0) {
        out.push(Violation::FrameSize { width: w, height: h });
    }
    out
}

fn check_frame_size(sample: &MotionSample) -> Result<(f64, f64)> {
    let (w, h) = sample.frame_size;
    if w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite() {
        Ok((w, h))
    } else {
        Err(invalid!("frame size must be positive, found {w}x{h}"))
    }
}

/// Map pixel coordinates to model coordinates in `[-1, 1]^2`.
pub fn normalize(sample: &MotionSample) -> Result<MotionSample> {
    let (w, h) = check_frame_size(sample)?;
    Ok(sample.map_coords(|x, y| (2.0 * (x / w) - 1.0, 2.0 * (y / h) - 1.0)))
}

/// Inverse of [`normalize`].
pub fn denormalize(sample: &MotionSample) -> Result<MotionSample> {
    let (w, h) = check_frame_size(sample)?;
    Ok(sample.map_coords(|x, y| ((x + 1.0) * 0.5 * w, (y + 1.0) * 0.5 * h)))
}

/// Store a single-character sample as two identical tracks.
pub fn replicate_single_to_pair(sample: &MotionSample) -> Result<MotionSample> {
    if sample.tracks.len() != 1 || sample.person_count != 1 {
        return Err(invalid!(
            "replication needs exactly one track with person_count 1 (found {} tracks, person_count {})",
            sample.tracks.len(),
            sample.person_count
        ));
    }
    let mut out = sample.clone();
    out.tracks.push(sample.tracks[0].clone());
    out.replicated = true;
    Ok(out)
}

/// Length of every bone of `pose`, measured on (x, y).
pub fn bone_lengths(pose: &Pose, topology: &SkeletonTopology) -> Vec<f64> {
    topology
        .edges
        .iter()
        .map(|&(p, c)| {
            let (a, b) = (pose.keypoints[p], pose.keypoints[c]);
            libm::hypot(a.x - b.x, a.y - b.y)
        })
        .collect()
}

/// Mean per-joint displacement between frame `f - 1` and frame `f`.
pub fn frame_displacement(track: &CharacterTrack, f: usize) -> Result<f64> {
    if f == 0 {
        return Err(invalid!("frame 0 has no predecessor"));
    }
    if f >= track.len() {
        return Err(invalid!("frame {f} out of range for a track of {} frames", track.len()));
    }
    let (prev, cur) = (&track.frames[f - 1], &track.frames[f]);
    let total: f64 = prev
        .keypoints
        .iter()
        .zip(&cur.keypoints)
        .map(|(a, b)| libm::hypot(b.x - a.x, b.y - a.y))
        .sum();
    Ok(total / NUM_JOINTS as f64)
}

/// A standing figure centered at (`cx`, `cy`) with total height `h`, in the
/// same units as the inputs (y grows downward, as in image coordinates).
pub fn standing_pose(cx: f64, cy: f64, h: f64, confidence: f64) -> Pose {
    // (dx, dy) offsets in units of height, COCO order
    const OFFSETS: [(f64, f64); NUM_JOINTS] = [
        (0.0, -0.45),
        (-0.03, -0.47),
        (0.03, -0.47),
        (-0.06, -0.45),
        (0.06, -0.45),
        (-0.12, -0.32),
        (0.12, -0.32),
        (-0.15, -0.12),
        (0.15, -0.12),
        (-0.16, 0.05),
        (0.16, 0.05),
        (-0.08, 0.02),
        (0.08, 0.02),
        (-0.09, 0.25),
        (0.09, 0.25),
        (-0.09, 0.48),
        (0.09, 0.48),
    ];
    let mut kps = [Keypoint::new(0.0, 0.0, confidence); NUM_JOINTS];
    for (k, (dx, dy)) in kps.iter_mut().zip(OFFSETS) {
        k.x = cx + dx * h;
        k.y = cy + dy * h;
    }
    Pose::new(kps)
}

/// Convenience constructor used by tests and synthetic corpora.
pub fn sample_from_tracks(
    source_id: &str,
    caption: &str,
    frame_size: (f64, f64),
    tracks: Vec<CharacterTrack>,
) -> MotionSample {
    let person_count = tracks.len().min(2) as u8;
    MotionSample {
        source_id: String::from(source_id),
        caption: String::from(caption),
        person_count,
        replicated: false,
        frame_size,
        tracks,
    }
}

/// Track of `len` copies of `pose`.
pub fn static_track(pose: Pose, len: usize) -> CharacterTrack {
    CharacterTrack::new(vec![pose; len])
}
