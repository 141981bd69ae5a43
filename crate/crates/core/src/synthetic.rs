//! A tiny procedural corpus of eight captioned motions, four with one
//! character and four with two, in pixel coordinates.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use crate::motion::{sample_from_tracks, standing_pose, CharacterTrack, MotionSample, Pose};

pub const TOY_FRAME_SIZE: (f64, f64) = (640.0, 480.0);
const HEIGHT: f64 = 200.0;
const CONFIDENCE: f64 = 0.9;

/// One toy action: caption, person count and the per-frame pose generator.
struct Action {
    caption: &'static str,
    people: usize,
    pose: fn(usize, f64) -> Pose,
}

fn lift(pose: &mut Pose, joints: &[usize], dx: f64, dy: f64) {
    for &j in joints {
        pose.keypoints[j].x += dx;
        pose.keypoints[j].y += dy;
    }
}

fn wave(_: usize, phase: f64) -> Pose {
    let mut p = standing_pose(320.0, 260.0, HEIGHT, CONFIDENCE);
    lift(&mut p, &[8], 10.0, -60.0);
    lift(&mut p, &[10], 30.0 * libm::sin(2.0 * phase) + 20.0, -130.0);
    p
}

fn jump(_: usize, phase: f64) -> Pose {
    let h = 35.0 * libm::fabs(libm::sin(phase));
    let mut p = standing_pose(320.0, 260.0 - h, HEIGHT, CONFIDENCE);
    lift(&mut p, &[9, 10], 0.0, -0.8 * h);
    p
}

fn walk_left(_: usize, phase: f64) -> Pose {
    let cx = 400.0 - 160.0 * phase / TAU;
    let mut p = standing_pose(cx, 260.0, HEIGHT, CONFIDENCE);
    let swing = 18.0 * libm::sin(2.0 * phase);
    lift(&mut p, &[13, 15], swing, 0.0);
    lift(&mut p, &[14, 16], -swing, 0.0);
    lift(&mut p, &[9], -swing, 0.0);
    lift(&mut p, &[10], swing, 0.0);
    p
}

fn squat(_: usize, phase: f64) -> Pose {
    let depth = 45.0 * (1.0 - libm::cos(phase)) / 2.0;
    let mut p = standing_pose(320.0, 260.0, HEIGHT, CONFIDENCE);
    lift(&mut p, &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12], 0.0, depth);
    lift(&mut p, &[13], -0.6 * depth, 0.5 * depth);
    lift(&mut p, &[14], 0.6 * depth, 0.5 * depth);
    lift(&mut p, &[9, 10], 0.0, -0.5 * depth);
    p
}

fn handshake(person: usize, phase: f64) -> Pose {
    let side = if person == 0 { -1.0 } else { 1.0 };
    let mut p = standing_pose(320.0 + side * 70.0, 260.0, HEIGHT, CONFIDENCE);
    let shake = 10.0 * libm::sin(3.0 * phase);
    let (elbow, wrist) = if person == 0 { (8, 10) } else { (7, 9) };
    lift(&mut p, &[elbow], -side * 20.0, -10.0);
    let wx = 320.0 - p.keypoints[wrist].x;
    lift(&mut p, &[wrist], wx - side * 2.0, -30.0 + shake);
    p
}

fn push(person: usize, phase: f64) -> Pose {
    let t = (1.0 - libm::cos(phase / 2.0)) / 2.0;
    if person == 0 {
        let mut p = standing_pose(260.0, 260.0, HEIGHT, CONFIDENCE);
        lift(&mut p, &[7, 8], 15.0 + 20.0 * t, -20.0);
        lift(&mut p, &[9, 10], 30.0 + 45.0 * t, -45.0);
        p
    } else {
        let mut p = standing_pose(340.0 + 90.0 * t, 260.0, HEIGHT, CONFIDENCE);
        lift(&mut p, &[0, 1, 2, 3, 4, 5, 6], 12.0 * t, 0.0);
        p
    }
}

fn hug(person: usize, phase: f64) -> Pose {
    let side = if person == 0 { -1.0 } else { 1.0 };
    let gap = 120.0 - 70.0 * (1.0 - libm::cos(phase / 2.0)) / 2.0;
    let mut p = standing_pose(320.0 + side * gap / 2.0, 260.0, HEIGHT, CONFIDENCE);
    lift(&mut p, &[7, 8], -side * 20.0, -15.0);
    lift(&mut p, &[9, 10], -side * 35.0, -40.0);
    p
}

fn circle_dance(person: usize, phase: f64) -> Pose {
    let angle = phase / 2.0 + if person == 0 { 0.0 } else { core::f64::consts::PI };
    let cx = 320.0 + 90.0 * libm::cos(angle);
    let cy = 260.0 + 12.0 * libm::sin(angle);
    let mut p = standing_pose(cx, cy, HEIGHT, CONFIDENCE);
    lift(&mut p, &[9, 10], 0.0, -70.0);
    p
}

const ACTIONS: [Action; 8] = [
    Action { caption: "a person waves the right hand", people: 1, pose: wave },
    Action { caption: "a person jumps in place", people: 1, pose: jump },
    Action { caption: "a person walks to the left", people: 1, pose: walk_left },
    Action { caption: "a person squats down and stands up", people: 1, pose: squat },
    Action { caption: "two people shake hands", people: 2, pose: handshake },
    Action { caption: "one person pushes the other away", people: 2, pose: push },
    Action { caption: "two people walk together and hug", people: 2, pose: hug },
    Action { caption: "two people dance around each other", people: 2, pose: circle_dance },
];

/// The eight toy samples, each `frames` long, in pixel coordinates with
/// untagged captions.
pub fn toy_corpus(frames: usize) -> Vec<MotionSample> {
    ACTIONS.iter().enumerate().map(|(i, action)| render_action(action, frames, 0, toy_id(i))).collect()
}

/// `variants` copies of every toy action; copy `v > 0` is shifted in
/// position and starts later in its cycle. Variant 0 equals [`toy_corpus`].
pub fn toy_corpus_variants(frames: usize, variants: usize) -> Vec<MotionSample> {
    (0..variants)
        .flat_map(|v| {
            ACTIONS.iter().enumerate().map(move |(i, action)| {
                let id = if v == 0 { toy_id(i) } else { format!("{}-v{v}", toy_id(i)) };
                render_action(action, frames, v, id)
            })
        })
        .collect()
}

fn render_action(action: &Action, frames: usize, variant: usize, id: String) -> MotionSample {
    let v = variant as f64;
    let sign = if variant % 2 == 0 { 1.0 } else { -1.0 };
    let (dx, dy) = (sign * 18.0 * v, 6.0 * v);
    let tracks = (0..action.people)
        .map(|person| {
            let poses = (0..frames)
                .map(|f| (action.pose)(person, TAU * f as f64 / frames.max(1) as f64 + 0.35 * v).translated(dx, dy))
                .collect();
            CharacterTrack::new(poses)
        })
        .collect();
    sample_from_tracks(&id, action.caption, TOY_FRAME_SIZE, tracks)
}

pub fn toy_id(index: usize) -> String {
    format!("toy-{index:02}")
}
