//! Static plot artifacts: a stick-figure frame strip, a speed/beat overlay
//! and the overlay's series as CSV.

use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};
use imageproc::drawing::{draw_filled_circle_mut, draw_line_segment_mut};
use interdiff_core::condition::ConditionTrack;
use interdiff_core::metrics::{audio_beats, gesture_beats, motion_energy};
use interdiff_core::motion::MotionSequence;

use crate::error::CliError;

pub const STRIP_FILE: &str = "strip.png";
pub const SPEED_FILE: &str = "speed.png";
pub const SPEED_CSV: &str = "speed.csv";

const PANEL_W: u32 = 120;
const PANEL_H: u32 = 160;
const MARGIN: f32 = 10.0;
const SPEED_W: u32 = 640;
const SPEED_H: u32 = 240;

const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const CONDITION: Rgb<u8> = Rgb([150, 150, 150]);
const PALETTE: [Rgb<u8>; 4] = [
    Rgb([31, 119, 180]),
    Rgb([214, 39, 40]),
    Rgb([44, 160, 44]),
    Rgb([255, 127, 14]),
];

fn color(i: usize) -> Rgb<u8> {
    PALETTE[i % PALETTE.len()]
}

/// `count` frame indices spread evenly over `frames`, first and last included.
pub fn strip_frames(frames: usize, count: usize) -> Vec<usize> {
    match (frames, count) {
        (0, _) | (_, 0) => vec![],
        (_, 1) => vec![0],
        _ => (0..count)
            .map(|i| ((i * (frames - 1)) as f64 / (count - 1) as f64).round() as usize)
            .collect(),
    }
}

/// Front view (x right, y up) of every motion at the chosen frames, one
/// panel per frame, motions overlaid in palette order.
pub fn frame_strip(motions: &[MotionSequence], count: usize) -> RgbImage {
    let frames = motions.iter().map(|m| m.frame_count()).min().unwrap_or(0);
    let picks = strip_frames(frames, count);
    let positions: Vec<_> = motions.iter().map(|m| m.joint_positions()).collect();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for pos in &positions {
        for &f in &picks {
            for p in &pos[f] {
                for k in 0..2 {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-6);
    let scale = (PANEL_W.min(PANEL_H) as f64 - 2.0 * MARGIN as f64) / span;
    let mut img = RgbImage::from_pixel(PANEL_W * picks.len().max(1) as u32, PANEL_H, BACKGROUND);
    for (panel, &f) in picks.iter().enumerate() {
        let x0 = panel as f32 * PANEL_W as f32;
        if panel > 0 {
            draw_line_segment_mut(&mut img, (x0, 0.0), (x0, PANEL_H as f32), GRID);
        }
        let to_px = |p: [f64; 3]| {
            (
                x0 + MARGIN + ((p[0] - lo[0]) * scale) as f32,
                PANEL_H as f32 - MARGIN - ((p[1] - lo[1]) * scale) as f32,
            )
        };
        for (i, (m, pos)) in motions.iter().zip(&positions).enumerate() {
            let joints = &pos[f];
            for (j, &parent) in m.skeleton().parents().iter().enumerate() {
                if parent >= 0 {
                    draw_line_segment_mut(&mut img, to_px(joints[parent as usize]), to_px(joints[j]), color(i));
                }
            }
            for &p in joints {
                let (x, y) = to_px(p);
                draw_filled_circle_mut(&mut img, (x.round() as i32, y.round() as i32), 2, color(i));
            }
        }
    }
    img
}

/// Speed and beat series, one row per frame.
pub struct SpeedSeries {
    pub energy: Vec<Vec<f64>>,
    pub gesture_beats: Vec<Vec<bool>>,
    pub condition: Option<Vec<f64>>,
    pub audio_beats: Option<Vec<bool>>,
}

impl SpeedSeries {
    pub fn new(motions: &[MotionSequence], condition: Option<&ConditionTrack>) -> Self {
        let frames = motions.iter().map(|m| m.frame_count()).min().unwrap_or(0);
        let mark = |beats: Vec<usize>| {
            let mut v = vec![false; frames];
            for b in beats.into_iter().filter(|&b| b < frames) {
                v[b] = true;
            }
            v
        };
        Self {
            energy: motions
                .iter()
                .map(|m| motion_energy(m)[..frames].to_vec())
                .collect(),
            gesture_beats: motions.iter().map(|m| mark(gesture_beats(m))).collect(),
            condition: condition.map(|c| c.channel(0).into_iter().take(frames).collect()),
            audio_beats: condition.map(|c| mark(audio_beats(c))),
        }
    }

    pub fn frames(&self) -> usize {
        self.energy.first().map_or(0, Vec::len)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame");
        for i in 0..self.energy.len() {
            write!(out, ",energy_{i},gesture_beat_{i}").unwrap();
        }
        if self.condition.is_some() {
            out.push_str(",condition_0,audio_beat");
        }
        out.push('\n');
        for f in 0..self.frames() {
            write!(out, "{f}").unwrap();
            for (e, g) in self.energy.iter().zip(&self.gesture_beats) {
                write!(out, ",{},{}", e[f], u8::from(g[f])).unwrap();
            }
            if let (Some(c), Some(a)) = (&self.condition, &self.audio_beats) {
                write!(out, ",{},{}", c[f], u8::from(a[f])).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Energies scaled to a shared maximum, the condition to its own; audio
    /// beats as vertical lines, gesture beats as ticks under each curve.
    pub fn render(&self) -> RgbImage {
        let mut img = RgbImage::from_pixel(SPEED_W, SPEED_H, BACKGROUND);
        let frames = self.frames();
        if frames < 2 {
            return img;
        }
        let plot_h = SPEED_H as f32 - 2.0 * MARGIN;
        let x = |f: usize| MARGIN + f as f32 * (SPEED_W as f32 - 2.0 * MARGIN) / (frames - 1) as f32;
        let y = |v: f64, max: f64| SPEED_H as f32 - MARGIN - (v / max.max(1e-12)) as f32 * plot_h;
        if let Some(beats) = &self.audio_beats {
            for f in (0..frames).filter(|&f| beats[f]) {
                draw_line_segment_mut(&mut img, (x(f), MARGIN), (x(f), SPEED_H as f32 - MARGIN), GRID);
            }
        }
        let polyline = |img: &mut RgbImage, v: &[f64], max: f64, c: Rgb<u8>| {
            for f in 1..v.len() {
                draw_line_segment_mut(img, (x(f - 1), y(v[f - 1], max)), (x(f), y(v[f], max)), c);
            }
        };
        if let Some(cond) = &self.condition {
            let max = cond.iter().copied().fold(0.0, f64::max);
            polyline(&mut img, cond, max, CONDITION);
        }
        let max = self.energy.iter().flatten().copied().fold(0.0, f64::max);
        for (i, (e, g)) in self.energy.iter().zip(&self.gesture_beats).enumerate() {
            polyline(&mut img, e, max, color(i));
            for f in (0..frames).filter(|&f| g[f]) {
                let yf = y(e[f], max);
                draw_line_segment_mut(&mut img, (x(f), yf + 2.0), (x(f), yf + 8.0), color(i));
            }
        }
        img
    }
}

pub fn plot(
    motions: &[MotionSequence],
    condition: Option<&ConditionTrack>,
    strip_count: usize,
    out: &Path,
) -> Result<(), CliError> {
    if motions.is_empty() {
        return Err(CliError::Usage("plot needs at least one motion file".into()));
    }
    if strip_count == 0 {
        return Err(CliError::Usage("strip frame count must be ≥ 1".into()));
    }
    let save = |img: RgbImage, name: &str| {
        img.save(out.join(name))
            .map_err(|e| CliError::Runtime(format!("writing {name}: {e}")))
    };
    save(frame_strip(motions, strip_count), STRIP_FILE)?;
    let series = SpeedSeries::new(motions, condition);
    save(series.render(), SPEED_FILE)?;
    std::fs::write(out.join(SPEED_CSV), series.to_csv())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strip_frames_cover_both_ends() {
        assert_eq!(strip_frames(48, 4), vec![0, 16, 31, 47]);
        assert_eq!(strip_frames(48, 1), vec![0]);
        assert!(strip_frames(0, 3).is_empty());
    }
}
