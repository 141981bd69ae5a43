//! Dataset curation: the limb-integrity, motion-smoothness and
//! contextual-stability filters, caption count tagging, and the stratified
//! train/test split.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::motion::{frame_displacement, normalize, validate_sample, CharacterTrack, MotionSample, Pose};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleaningConfig {
    pub conf_threshold: f64,
    pub face_conf_threshold: f64,
    /// Displacement threshold in normalized units.
    pub tau_smooth: f64,
    /// Largest tolerated fraction of frames whose displacement exceeds `tau_smooth`.
    pub irregular_frame_fraction: f64,
    /// Largest tolerated number of frames at which the valid-person count changes.
    pub person_count_change_limit: usize,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            conf_threshold: 0.5,
            face_conf_threshold: 0.5,
            tau_smooth: 0.08,
            irregular_frame_fraction: 0.05,
            person_count_change_limit: 4,
        }
    }
}

impl CleaningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.conf_threshold > 0.0 && self.face_conf_threshold > 0.0 && self.tau_smooth > 0.0) {
            return Err(invalid!("cleaning thresholds must be positive: {self:?}"));
        }
        if !(self.irregular_frame_fraction > 0.0 && self.irregular_frame_fraction <= 1.0) {
            return Err(invalid!("irregular_frame_fraction must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Mean confidence over the whole track and over its face joints must both
/// exceed their thresholds.
pub fn check_limb_integrity(track: &CharacterTrack, cfg: &CleaningConfig) -> bool {
    if track.is_empty() {
        return false;
    }
    let n = track.len() as f64;
    let overall = track.frames.iter().map(Pose::mean_confidence).sum::<f64>() / n;
    let face = track.frames.iter().map(Pose::mean_face_confidence).sum::<f64>() / n;
    overall > cfg.conf_threshold && face > cfg.face_conf_threshold
}

/// Per-frame form of the limb-integrity test, used to count validly tracked
/// persons at each frame.
pub fn pose_is_valid(pose: &Pose, cfg: &CleaningConfig) -> bool {
    pose.mean_confidence() > cfg.conf_threshold && pose.mean_face_confidence() > cfg.face_conf_threshold
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessCheck {
    pub pass: bool,
    /// Frames `f >= 1` with displacement above `tau_smooth`.
    pub flagged: Vec<usize>,
}

pub fn check_motion_smoothness(track: &CharacterTrack, cfg: &CleaningConfig) -> SmoothnessCheck {
    if track.len() < 2 {
        return SmoothnessCheck { pass: true, flagged: Vec::new() };
    }
    let flagged: Vec<usize> = (1..track.len())
        .filter(|&f| frame_displacement(track, f).is_ok_and(|d| d > cfg.tau_smooth))
        .collect();
    let fraction = flagged.len() as f64 / (track.len() - 1) as f64;
    SmoothnessCheck { pass: fraction <= cfg.irregular_frame_fraction, flagged }
}

/// Number of frame-to-frame changes in `counts` must not exceed the limit.
pub fn check_contextual_stability(counts: &[usize], cfg: &CleaningConfig) -> bool {
    count_changes(counts) <= cfg.person_count_change_limit
}

pub fn count_changes(counts: &[usize]) -> usize {
    counts.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Validly tracked persons per frame. A replicated pair counts its single
/// character once.
pub fn valid_person_counts(sample: &MotionSample, cfg: &CleaningConfig) -> Vec<usize> {
    let tracks = distinct_tracks(sample);
    (0..sample.len())
        .map(|f| tracks.iter().filter(|t| t.frames.get(f).is_some_and(|p| pose_is_valid(p, cfg))).count())
        .collect()
}

fn distinct_tracks(sample: &MotionSample) -> &[CharacterTrack] {
    if sample.replicated {
        &sample.tracks[..sample.tracks.len().min(1)]
    } else {
        &sample.tracks
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Io,
    Invalid,
    LimbIntegrity,
    MotionSmoothness,
    ContextualStability,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Io => "io",
            Self::Invalid => "invalid",
            Self::LimbIntegrity => "limb_integrity",
            Self::MotionSmoothness => "motion_smoothness",
            Self::ContextualStability => "contextual_stability",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleVerdict {
    pub source_id: String,
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<RejectReason>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Outcome of the three filters applied in sequence; the first failing
/// filter is the reported reason.
pub fn judge_sample(sample: &MotionSample, cfg: &CleaningConfig) -> SampleVerdict {
    let reject = |reason, detail: String| SampleVerdict {
        source_id: sample.source_id.clone(),
        accepted: false,
        reason: Some(reason),
        detail: Some(detail),
    };
    let violations = validate_sample(sample);
    if let Some(v) = violations.first() {
        return reject(RejectReason::Invalid, v.to_string());
    }
    let normalized = match normalize(sample) {
        Ok(s) => s,
        Err(e) => return reject(RejectReason::Invalid, e.to_string()),
    };
    let tracks = distinct_tracks(&normalized);
    if let Some(i) = tracks.iter().position(|t| !check_limb_integrity(t, cfg)) {
        return reject(RejectReason::LimbIntegrity, format!("track {i} below confidence thresholds"));
    }
    for (i, t) in tracks.iter().enumerate() {
        let s = check_motion_smoothness(t, cfg);
        if !s.pass {
            return reject(
                RejectReason::MotionSmoothness,
                format!("track {i}: {} of {} transitions above tau_smooth", s.flagged.len(), t.len() - 1),
            );
        }
    }
    let counts = valid_person_counts(&normalized, cfg);
    if !check_contextual_stability(&counts, cfg) {
        return reject(
            RejectReason::ContextualStability,
            format!("{} changes in valid person count", count_changes(&counts)),
        );
    }
    SampleVerdict { source_id: sample.source_id.clone(), accepted: true, reason: None, detail: None }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub ingested: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// Rejections keyed by reason name.
    pub rejected_by: BTreeMap<String, usize>,
    /// Sorted by `source_id`.
    pub verdicts: Vec<SampleVerdict>,
}

impl CleaningReport {
    pub fn from_verdicts(mut verdicts: Vec<SampleVerdict>) -> Self {
        verdicts.sort_by(|a, b| a.source_id.cmp(&b.source_id));
        let mut rejected_by = BTreeMap::new();
        for r in [
            RejectReason::Io,
            RejectReason::Invalid,
            RejectReason::LimbIntegrity,
            RejectReason::MotionSmoothness,
            RejectReason::ContextualStability,
        ] {
            rejected_by.insert(String::from(r.as_str()), 0);
        }
        for v in &verdicts {
            if let Some(r) = v.reason {
                *rejected_by.entry(String::from(r.as_str())).or_insert(0) += 1;
            }
        }
        let accepted = verdicts.iter().filter(|v| v.accepted).count();
        Self { ingested: verdicts.len(), accepted, rejected: verdicts.len() - accepted, rejected_by, verdicts }
    }

    pub fn accepted_ids(&self) -> impl Iterator<Item = &str> {
        self.verdicts.iter().filter(|v| v.accepted).map(|v| v.source_id.as_str())
    }
}

/// Judge a batch. Entries that could not be loaded carry their error text
/// and are rejected with reason `io`.
pub fn clean_samples<I>(inputs: I, cfg: &CleaningConfig) -> CleaningReport
where
    I: IntoIterator<Item = (String, core::result::Result<MotionSample, String>)>,
{
    let verdicts = inputs
        .into_iter()
        .map(|(id, loaded)| match loaded {
            Ok(sample) => {
                let mut v = judge_sample(&sample, cfg);
                v.source_id = id;
                v
            }
            Err(detail) => SampleVerdict { source_id: id, accepted: false, reason: Some(RejectReason::Io), detail: Some(detail) },
        })
        .collect();
    CleaningReport::from_verdicts(verdicts)
}

fn count_prefix(count: u8) -> String {
    format!("{count} persons. ")
}

/// Prefix the caption with the person count, e.g. `"2 persons. ..."`.
/// Applying it to an already tagged caption is a no-op.
pub fn tag_caption(count: u8, caption: &str) -> String {
    let prefix = count_prefix(count);
    if caption.starts_with(&prefix) {
        String::from(caption)
    } else {
        format!("{prefix}{caption}")
    }
}

pub fn augment_caption_with_count(sample: &MotionSample) -> MotionSample {
    let mut out = sample.clone();
    out.caption = tag_caption(sample.person_count, &sample.caption);
    out
}

/// The person count encoded in a tagged caption, if any.
pub fn parse_count_prefix(caption: &str) -> Option<u8> {
    [1u8, 2].into_iter().find(|&n| caption.starts_with(&count_prefix(n)))
}

/// Stratified, seeded split. Each stratum contributes
/// `round(n * test_fraction)` items (at least one, at most `n - 1`) to the
/// test side; relative input order is preserved on both sides.
pub fn split_stratified<T: Clone>(
    items: &[T],
    stratum: impl Fn(&T) -> u8,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(invalid!("test_fraction must lie in (0, 1), found {test_fraction}"));
    }
    let mut strata: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        strata.entry(stratum(item)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_test = alloc::vec![false; items.len()];
    for (key, mut members) in strata {
        let n = members.len();
        if n < 2 {
            return Err(invalid!("stratum {key} has {n} sample(s); at least 2 are needed"));
        }
        let n_test = (libm::round(n as f64 * test_fraction) as usize).clamp(1, n - 1);
        members.shuffle(&mut rng);
        for &i in &members[..n_test] {
            is_test[i] = true;
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (item, t) in items.iter().zip(is_test) {
        if t { test.push(item.clone()) } else { train.push(item.clone()) }
    }
    Ok((train, test))
}
