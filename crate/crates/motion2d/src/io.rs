//! Motion JSON files: one sample per file, pixel coordinates.

use std::fs;
use std::path::Path;

use motion2d_core::motion::{validate_sample, CharacterTrack, Keypoint, MotionSample, Pose, NUM_JOINTS};
use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Serialize)]
struct MotionFile<'a> {
    source_id: &'a str,
    caption: &'a str,
    person_count: u8,
    replicated: bool,
    frame_size: [f64; 2],
    tracks: Vec<Vec<Vec<[f64; 3]>>>,
}

pub fn motion_to_json(sample: &MotionSample) -> String {
    let file = MotionFile {
        source_id: &sample.source_id,
        caption: &sample.caption,
        person_count: sample.person_count,
        replicated: sample.replicated,
        frame_size: [sample.frame_size.0, sample.frame_size.1],
        tracks: sample
            .tracks
            .iter()
            .map(|t| t.frames.iter().map(|p| p.keypoints.iter().map(|k| [k.x, k.y, k.confidence]).collect()).collect())
            .collect(),
    };
    let mut text = serde_json::to_string(&file).expect("motion samples always serialize");
    text.push('\n');
    text
}

/// Describe a JSON syntax error, recognizing non-finite literals.
fn syntax_error(text: &str, err: &serde_json::Error) -> String {
    let (line, col) = (err.line(), err.column());
    let rest = text
        .lines()
        .nth(line.saturating_sub(1))
        .map(|l| {
            let start = col.saturating_sub(1).min(l.len());
            l.get(start..).unwrap_or("")
        })
        .unwrap_or("");
    let token = rest.trim_start_matches(['-', '+']);
    let non_finite = ["nan", "inf"].iter().any(|p| token.to_ascii_lowercase().starts_with(p))
        || err.to_string().contains("out of range");
    if non_finite {
        format!("non-finite value at line {line} column {col}")
    } else {
        format!("malformed JSON at line {line} column {col}: {err}")
    }
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, key: &str) -> Result<&'a Value, String> {
    obj.get(key).ok_or_else(|| format!("missing key \"{key}\""))
}

fn number(v: &Value, at: &str) -> Result<f64, String> {
    let x = v.as_f64().ok_or_else(|| format!("{at}: expected a number"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("{at}: non-finite value"))
    }
}

fn array<'a>(v: &'a Value, at: &str) -> Result<&'a Vec<Value>, String> {
    v.as_array().ok_or_else(|| format!("{at}: expected an array"))
}

fn parse_track(v: &Value, t: usize) -> Result<CharacterTrack, String> {
    let frames = array(v, &format!("tracks[{t}]"))?;
    let mut poses = Vec::with_capacity(frames.len());
    for (f, frame) in frames.iter().enumerate() {
        let at = format!("tracks[{t}][{f}]");
        let kps = array(frame, &at)?;
        if kps.len() != NUM_JOINTS {
            return Err(format!("{at}: expected {NUM_JOINTS} keypoints, found {}", kps.len()));
        }
        let mut pose = Pose::uniform(0.0, 0.0, 0.0);
        for (j, kp) in kps.iter().enumerate() {
            let at = format!("{at}[{j}]");
            let xyc = array(kp, &at)?;
            if xyc.len() != 3 {
                return Err(format!("{at}: expected [x, y, confidence], found {} values", xyc.len()));
            }
            pose.keypoints[j] = Keypoint::new(number(&xyc[0], &at)?, number(&xyc[1], &at)?, number(&xyc[2], &at)?);
        }
        poses.push(pose);
    }
    Ok(CharacterTrack::new(poses))
}

/// Parse and validate one motion document.
pub fn parse_motion_json(text: &str) -> Result<MotionSample, String> {
    let value: Value = serde_json::from_str(text).map_err(|e| syntax_error(text, &e))?;
    let obj = value.as_object().ok_or("expected a JSON object")?;
    let string = |key: &str| -> Result<String, String> {
        field(obj, key)?.as_str().map(str::to_owned).ok_or_else(|| format!("{key}: expected a string"))
    };
    let person_count = field(obj, "person_count")?
        .as_u64()
        .and_then(|n| u8::try_from(n).ok())
        .ok_or("person_count: expected 1 or 2")?;
    let replicated = field(obj, "replicated")?.as_bool().ok_or("replicated: expected a boolean")?;
    let size = array(field(obj, "frame_size")?, "frame_size")?;
    if size.len() != 2 {
        return Err(format!("frame_size: expected [width, height], found {} values", size.len()));
    }
    let frame_size = (number(&size[0], "frame_size[0]")?, number(&size[1], "frame_size[1]")?);
    let tracks = array(field(obj, "tracks")?, "tracks")?
        .iter()
        .enumerate()
        .map(|(t, v)| parse_track(v, t))
        .collect::<Result<Vec<_>, _>>()?;
    let sample = MotionSample {
        source_id: string("source_id")?,
        caption: string("caption")?,
        person_count,
        replicated,
        frame_size,
        tracks,
    };
    if let Some(v) = validate_sample(&sample).first() {
        return Err(v.to_string());
    }
    Ok(sample)
}

pub fn read_motion_file(path: &Path) -> CliResult<MotionSample> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_motion_json(&text).map_err(|msg| CliError::data(path, msg))
}

pub fn write_motion_file(sample: &MotionSample, path: &Path) -> CliResult<()> {
    write_text(path, &motion_to_json(sample))
}

/// Write `text`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(path, syntax_error(&text, &e)))
}
