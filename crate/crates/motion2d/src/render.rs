//! Skeleton animations: one SVG per frame, or a looping GIF.

use std::borrow::Cow;
use std::fmt::Write as _;

use motion2d_core::motion::{MotionSample, Pose, SkeletonTopology};

use crate::config::RenderStyle;
use crate::error::{CliError, CliResult};

/// Rendered output size in pixels.
pub fn canvas_size(sample: &MotionSample, style: &RenderStyle) -> CliResult<(u16, u16)> {
    let dim = |v: f64| -> CliResult<u16> {
        let px = (v * style.scale).round();
        if px >= 1.0 && px <= f64::from(u16::MAX) {
            Ok(px as u16)
        } else {
            Err(CliError::Usage(format!("rendered size {px} out of range; adjust the scale")))
        }
    };
    Ok((dim(sample.frame_size.0)?, dim(sample.frame_size.1)?))
}

fn check_style(style: &RenderStyle) -> CliResult<()> {
    let positive = [style.scale, style.line_width, style.joint_radius];
    if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || style.fps == 0 {
        return Err(CliError::Usage(format!("invalid render style {style:?}")));
    }
    for c in style.colors.iter().chain([&style.background]) {
        parse_hex_color(c)?;
    }
    Ok(())
}

fn visible(pose: &Pose, j: usize) -> bool {
    pose.keypoints[j].confidence > 0.0
}

/// One SVG document per frame.
pub fn render_svg_frames(sample: &MotionSample, style: &RenderStyle) -> CliResult<Vec<String>> {
    check_style(style)?;
    let (w, h) = canvas_size(sample, style)?;
    let s = style.scale;
    let topology = SkeletonTopology::coco17();
    let font = 16.0 * s.max(0.5);
    let frames = (0..sample.len())
        .map(|f| {
            let mut svg = String::new();
            let _ = writeln!(
                svg,
                r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
            );
            let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="{}"/>"#, style.background);
            for (c, track) in sample.tracks.iter().enumerate() {
                let pose = &track.frames[f];
                let color = &style.colors[c % 2];
                let _ = writeln!(
                    svg,
                    r#"<g id="character-{c}" stroke="{color}" fill="{color}" stroke-width="{:.2}" stroke-linecap="round">"#,
                    style.line_width
                );
                for &(a, b) in topology.edges {
                    if visible(pose, a) && visible(pose, b) {
                        let (p, q) = (pose.keypoints[a], pose.keypoints[b]);
                        let _ = writeln!(
                            svg,
                            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#,
                            p.x * s,
                            p.y * s,
                            q.x * s,
                            q.y * s
                        );
                    }
                }
                for (j, k) in pose.keypoints.iter().enumerate() {
                    if visible(pose, j) {
                        let _ = writeln!(
                            svg,
                            r#"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" stroke="none"/>"#,
                            k.x * s,
                            k.y * s,
                            style.joint_radius
                        );
                    }
                }
                svg.push_str("</g>\n");
            }
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" font-family="monospace" font-size="{font:.2}" fill="black">frame {f}</text>"#,
                font * 0.5,
                font * 1.25
            );
            svg.push_str("</svg>\n");
            svg
        })
        .collect();
    Ok(frames)
}

pub fn parse_hex_color(s: &str) -> CliResult<[u8; 3]> {
    let hex = s.strip_prefix('#').filter(|h| h.len() == 6 && h.is_ascii());
    let bad = || CliError::Usage(format!("colour {s:?} is not of the form #rrggbb"));
    let hex = hex.ok_or_else(bad)?;
    let mut rgb = [0u8; 3];
    for (i, c) in rgb.iter_mut().enumerate() {
        *c = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    Ok(rgb)
}

/// 3x5 bitmaps for the digits 0-9, one row per entry, high bit on the left.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

const BACKGROUND: u8 = 0;
const TEXT: u8 = 3;

struct Canvas {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Canvas {
    fn new(width: u16, height: u16) -> Self {
        let (width, height) = (usize::from(width), usize::from(height));
        Self { width, height, pixels: vec![BACKGROUND; width * height] }
    }

    fn put(&mut self, x: i64, y: i64, color: u8) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.pixels[y as usize * self.width + x as usize] = color;
        }
    }

    fn disc(&mut self, cx: i64, cy: i64, r: f64, color: u8) {
        let ri = r.ceil() as i64;
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                if ((dx * dx + dy * dy) as f64) <= r * r {
                    self.put(cx + dx, cy + dy, color);
                }
            }
        }
    }

    /// Bresenham line stamped with a disc of radius `r`.
    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), r: f64, color: u8) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.disc(x, y, r, color);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn number(&mut self, n: usize, x0: i64, y0: i64, cell: i64) {
        for (i, ch) in n.to_string().bytes().enumerate() {
            let glyph = DIGITS[usize::from(ch - b'0')];
            let left = x0 + i as i64 * 4 * cell;
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..3 {
                    if bits & (0b100 >> col) != 0 {
                        for py in 0..cell {
                            for px in 0..cell {
                                self.put(left + col * cell + px, y0 + row as i64 * cell + py, TEXT);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// An infinitely looping GIF with one frame per motion frame.
pub fn render_gif(sample: &MotionSample, style: &RenderStyle) -> CliResult<Vec<u8>> {
    check_style(style)?;
    let (w, h) = canvas_size(sample, style)?;
    let mut palette = Vec::with_capacity(12);
    palette.extend(parse_hex_color(&style.background)?);
    palette.extend(parse_hex_color(&style.colors[0])?);
    palette.extend(parse_hex_color(&style.colors[1])?);
    palette.extend([0, 0, 0]);
    let s = style.scale;
    let at = |x: f64, y: f64| ((x * s).round() as i64, (y * s).round() as i64);
    let topology = SkeletonTopology::coco17();
    let cell = (2.0 * s).round().max(1.0) as i64;
    let delay = (100 / style.fps).max(1);

    let mut bytes = Vec::new();
    {
        let gif_err = |e: gif::EncodingError| CliError::Data(format!("gif encoding failed: {e}"));
        let mut encoder = gif::Encoder::new(&mut bytes, w, h, &palette).map_err(gif_err)?;
        encoder.set_repeat(gif::Repeat::Infinite).map_err(gif_err)?;
        for f in 0..sample.len() {
            let mut canvas = Canvas::new(w, h);
            for (c, track) in sample.tracks.iter().enumerate() {
                let pose = &track.frames[f];
                let color = 1 + (c % 2) as u8;
                for &(a, b) in topology.edges {
                    if visible(pose, a) && visible(pose, b) {
                        let (p, q) = (pose.keypoints[a], pose.keypoints[b]);
                        canvas.line(at(p.x, p.y), at(q.x, q.y), style.line_width / 2.0, color);
                    }
                }
                for (j, k) in pose.keypoints.iter().enumerate() {
                    if visible(pose, j) {
                        let (x, y) = at(k.x, k.y);
                        canvas.disc(x, y, style.joint_radius, color);
                    }
                }
            }
            canvas.number(f, 2 * cell, 2 * cell, cell);
            let frame = gif::Frame {
                width: w,
                height: h,
                delay,
                buffer: Cow::Owned(canvas.pixels),
                ..gif::Frame::default()
            };
            encoder.write_frame(&frame).map_err(gif_err)?;
        }
    }
    Ok(bytes)
}
