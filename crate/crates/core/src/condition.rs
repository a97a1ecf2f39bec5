//! Per-frame conditioning features (audio-derived in the original setting,
//! synthetic beat tracks here) and the feature file format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// `frame_count × channels` condition features.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionTrack {
    fps: f64,
    features: Matrix,
}

impl ConditionTrack {
    pub fn new(features: Matrix, fps: f64) -> Result<Self> {
        if features.rows() == 0 || features.cols() == 0 {
            return Err(Error::invalid("condition track needs ≥1 frame and ≥1 channel"));
        }
        if !features.is_finite() {
            return Err(Error::invalid("condition track has non-finite values"));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        Ok(Self { fps, features })
    }

    /// The null condition used for the unconditional branch of guidance.
    pub fn null(frame_count: usize, channels: usize, fps: f64) -> Self {
        Self {
            fps,
            features: Matrix::zeros(frame_count, channels),
        }
    }

    pub fn frame_count(&self) -> usize {
        self.features.rows()
    }

    pub fn channels(&self) -> usize {
        self.features.cols()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.features.column(c)
    }

    pub fn is_null(&self) -> bool {
        self.features.data().iter().all(|&v| v == 0.0)
    }

    /// Frames where channel 0 has a strict local peak (greater than the
    /// previous frame, not smaller than the next) above `threshold`.
    pub fn beat_frames(&self, threshold: f64) -> Vec<usize> {
        let env = self.channel(0);
        (0..env.len())
            .filter(|&f| {
                let prev = if f == 0 { f64::NEG_INFINITY } else { env[f - 1] };
                let next = env.get(f + 1).copied().unwrap_or(f64::NEG_INFINITY);
                env[f] > threshold && env[f] > prev && env[f] >= next
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct FeatureFile {
    fps: f64,
    channels: usize,
    frames: Vec<Vec<f64>>,
}

pub fn parse_condition(text: &str, source_name: &str) -> Result<ConditionTrack> {
    let file: FeatureFile = serde_json::from_str(text).map_err(|e| {
        Error::parse(
            source_name,
            format!("line {}, column {}: {e}", e.line(), e.column()),
        )
    })?;
    for (f, row) in file.frames.iter().enumerate() {
        if row.len() != file.channels {
            return Err(Error::parse(
                source_name,
                format!(
                    "frame {f}: expected {} channels, found {}",
                    file.channels,
                    row.len()
                ),
            ));
        }
    }
    let m = Matrix::from_rows(&file.frames).map_err(|e| Error::parse(source_name, e.to_string()))?;
    ConditionTrack::new(m, file.fps).map_err(|e| Error::parse(source_name, e.to_string()))
}

pub fn load_condition(path: impl AsRef<Path>) -> Result<ConditionTrack> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_condition(&text, &path.display().to_string())
}

pub fn condition_to_json(c: &ConditionTrack) -> String {
    let mut out = format!(
        "{{\n  \"fps\": {},\n  \"channels\": {},\n  \"frames\": [\n",
        serde_json::to_string(&c.fps).expect("f64 serializes"),
        c.channels()
    );
    for f in 0..c.frame_count() {
        out.push_str("    ");
        out.push_str(&serde_json::to_string(c.features.row(f)).expect("row serializes"));
        out.push_str(if f + 1 < c.frame_count() { ",\n" } else { "\n" });
    }
    out.push_str("  ]\n}\n");
    out
}

pub fn save_condition(c: &ConditionTrack, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, condition_to_json(c))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip_is_exact() {
        let m = Matrix::from_fn(6, 3, |r, c| (r as f64 * 0.37 - c as f64).sin() / 3.0);
        let c = ConditionTrack::new(m, 20.0).unwrap();
        let back = parse_condition(&condition_to_json(&c), "t").unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn channel_count_mismatch_is_rejected() {
        let text = r#"{"fps": 20, "channels": 2, "frames": [[1, 2], [3]]}"#;
        let err = parse_condition(text, "feat.json").unwrap_err();
        assert!(err.to_string().contains("frame 1"), "{err}");
    }

    #[test]
    fn beat_frames_are_local_peaks() {
        let env = [1.0, 0.5, 0.2, 0.9, 0.4, 0.0, 0.0];
        let m = Matrix::from_fn(env.len(), 1, |r, _| env[r]);
        let c = ConditionTrack::new(m, 10.0).unwrap();
        assert_eq!(c.beat_frames(0.1), vec![0, 3]);
    }
}
