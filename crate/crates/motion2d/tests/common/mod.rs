//! Shared fixtures: a hand-labelled cleaning corpus and binary helpers.
#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use motion2d_core::motion::{standing_pose, CharacterTrack, MotionSample, Pose};

pub const FRAMES: usize = 21;
pub const FRAME_SIZE: (f64, f64) = (640.0, 480.0);

/// Expected outcome per sample: `None` for accepted, else the reason name.
pub struct Labelled {
    pub sample: MotionSample,
    pub expected: Option<&'static str>,
}

fn pose_at(cx: f64, conf: f64, face_conf: f64) -> Pose {
    let mut p = standing_pose(cx, 260.0, 200.0, conf);
    for k in &mut p.keypoints[..5] {
        k.confidence = face_conf;
    }
    p
}

/// A track whose x centre and confidences are given per frame.
fn track(f: impl Fn(usize) -> (f64, f64, f64)) -> CharacterTrack {
    CharacterTrack::new(
        (0..FRAMES)
            .map(|i| {
                let (cx, conf, face) = f(i);
                pose_at(cx, conf, face)
            })
            .collect(),
    )
}

fn still(cx: f64) -> CharacterTrack {
    track(|_| (cx, 0.9, 0.9))
}

fn sample(id: &str, caption: &str, tracks: Vec<CharacterTrack>) -> MotionSample {
    MotionSample {
        source_id: id.into(),
        caption: caption.into(),
        person_count: tracks.len() as u8,
        replicated: false,
        frame_size: FRAME_SIZE,
        tracks,
    }
}

/// Twenty samples with hand-derived verdicts under the default cleaning
/// config (thresholds 0.5, tau_smooth 0.08, fraction 0.05, change limit 4).
/// Horizontal displacement of d pixels is d / 320 normalized units, so
/// tau_smooth corresponds to 25.6 px; with 20 transitions one flagged
/// transition is tolerated and two are not.
pub fn crafted_corpus() -> Vec<Labelled> {
    let flicker = |i: usize| if i % 2 == 0 { (420.0, 0.9, 0.9) } else { (420.0, 0.3, 0.3) };
    let gap = |ranges: &'static [(usize, usize)]| {
        move |i: usize| {
            if ranges.iter().any(|&(a, b)| (a..=b).contains(&i)) {
                (420.0, 0.3, 0.3)
            } else {
                (420.0, 0.9, 0.9)
            }
        }
    };
    let mut replicated = sample("c05-replicated", "a person stands still", vec![still(320.0), still(320.0)]);
    replicated.person_count = 1;
    replicated.replicated = true;
    let items = vec![
        (sample("c01-one-still", "a person stands", vec![still(320.0)]), None),
        (sample("c02-two-still", "two people stand", vec![still(220.0), still(420.0)]), None),
        (sample("c03-one-walk", "a person walks", vec![track(|i| (200.0 + 5.0 * i as f64, 0.9, 0.9))]), None),
        (
            sample(
                "c04-two-walk",
                "two people walk",
                vec![track(|i| (150.0 + 5.0 * i as f64, 0.9, 0.9)), track(|i| (450.0 - 5.0 * i as f64, 0.9, 0.9))],
            ),
            None,
        ),
        (replicated, None),
        // 0.4 everywhere: overall and face means 0.4
        (sample("c06-low-confidence", "a person", vec![track(|_| (320.0, 0.4, 0.4))]), Some("limb_integrity")),
        // overall (12 * 0.9 + 5 * 0.3) / 17 = 0.72 passes, face 0.3 fails
        (sample("c07-face-occluded", "a person", vec![track(|_| (320.0, 0.9, 0.3))]), Some("limb_integrity")),
        (
            sample("c08-second-weak", "two people", vec![still(220.0), track(|_| (420.0, 0.45, 0.45))]),
            Some("limb_integrity"),
        ),
        // thresholds are strict
        (sample("c09-at-threshold", "a person", vec![track(|_| (320.0, 0.5, 0.5))]), Some("limb_integrity")),
        // one 40 px jump: 1 of 20 transitions flagged, fraction 0.05 tolerated
        (
            sample("c10-single-jump", "a person", vec![track(|i| (if i < 10 { 300.0 } else { 340.0 }, 0.9, 0.9))]),
            None,
        ),
        (
            sample(
                "c11-two-jumps",
                "a person",
                vec![track(|i| (if (5..12).contains(&i) { 340.0 } else { 300.0 }, 0.9, 0.9))],
            ),
            Some("motion_smoothness"),
        ),
        (
            sample("c12-jitter", "a person", vec![track(|i| (if i % 2 == 0 { 290.0 } else { 350.0 }, 0.9, 0.9))]),
            Some("motion_smoothness"),
        ),
        (
            sample(
                "c13-second-teleports",
                "two people",
                vec![still(200.0), track(|i| (if (i / 3) % 2 == 0 { 380.0 } else { 460.0 }, 0.9, 0.9))],
            ),
            Some("motion_smoothness"),
        ),
        // 20 px per frame is 0.0625 units, below tau_smooth
        (sample("c14-fast-smooth", "a person runs", vec![track(|i| (100.0 + 20.0 * i as f64, 0.9, 0.9))]), None),
        // track means 0.6 pass; per-frame counts alternate 2, 1, 2, ...
        (sample("c15-flicker", "two people", vec![still(220.0), track(flicker)]), Some("contextual_stability")),
        // invalid in frames 5-7 and 12-14: changes at 5, 8, 12, 15
        (sample("c16-four-changes", "two people", vec![still(220.0), track(gap(&[(5, 7), (12, 14)]))]), None),
        // invalid in 3-4, 8-9 and 15-20: changes at 3, 5, 8, 10, 15; mean (12 * 0.9 + 9 * 0.3) / 21 = 0.64
        (
            sample("c17-five-changes", "two people", vec![still(220.0), track(gap(&[(3, 4), (8, 9), (15, 20)]))]),
            Some("contextual_stability"),
        ),
        // fails limb integrity and smoothness; limb integrity is reported
        (
            sample("c18-weak-and-jumpy", "a person", vec![track(|i| (if i % 2 == 0 { 290.0 } else { 350.0 }, 0.4, 0.4))]),
            Some("limb_integrity"),
        ),
        // fails smoothness and stability; smoothness is reported
        (
            sample(
                "c19-jumpy-and-flickering",
                "two people",
                vec![still(200.0), track(|i| if i % 2 == 0 { (380.0, 0.9, 0.9) } else { (460.0, 0.3, 0.3) })],
            ),
            Some("motion_smoothness"),
        ),
        // single person alternating valid and invalid: counts 1, 0, 1, ...
        (sample("c20-one-flicker", "a person", vec![track(|i| (320.0, flicker(i).1, flicker(i).2))]), Some("contextual_stability")),
    ];
    items.into_iter().map(|(sample, expected)| Labelled { sample, expected }).collect()
}

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_motion2d"))
}

/// Run the binary with `args`, panicking with stderr on failure.
pub fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "motion2d {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// A run config small enough to train in a few seconds.
pub fn tiny_config() -> serde_json::Value {
    serde_json::json!({
        "seed": 3,
        "test_fraction": 0.25,
        "text": {"standin": {"primary": {"local_dim": 16}}},
        "denoiser": {"num_layers": 1, "model_dim": 16, "num_heads": 2, "max_len": 16},
        "diffusion": {"num_steps": 50},
        "train": {
            "optimizer": {"learning_rate": 0.002},
            "stage1_epochs": 2,
            "stage2_epochs": 1,
            "batch_size": 4,
            "reference_rate": 1.0,
            "checkpoint_every": 2
        },
        "evaluator": {"embed_dim": 8, "model_dim": 8, "num_heads": 2, "num_layers": 1, "text_hidden": 16, "epochs": 2, "batch_size": 4},
        "sampler": {"num_inference_steps": 5},
        "sample": {"reference": true, "frames": 8},
        "eval": {"r_precision_batch": 32, "r_precision_trials": 50, "diversity_pairs": 20}
    })
}

pub fn write_config(dir: &Path, value: &serde_json::Value) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

/// Write each sample to `dir/<id>.json` and a manifest listing them in order.
pub fn write_corpus(dir: &Path, samples: &[&MotionSample]) -> std::path::PathBuf {
    let mut lines = String::new();
    for s in samples {
        let name = format!("{}.json", s.source_id);
        motion2d::io::write_motion_file(s, &dir.join(&name)).unwrap();
        let rec = motion2d::manifest::ManifestRecord {
            source_id: s.source_id.clone(),
            path: name,
            person_count: s.person_count,
            length: s.len(),
        };
        lines.push_str(&serde_json::to_string(&rec).unwrap());
        lines.push('\n');
    }
    let path = dir.join("manifest.jsonl");
    std::fs::write(&path, lines).unwrap();
    path
}
