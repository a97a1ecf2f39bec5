//! Deterministic synthetic speaker/listener pairs.
//!
//! Each sample draws a tempo and phase, places beats, and builds:
//! * a condition track whose channel 0 is a decaying spike at every beat and
//!   whose remaining channels are smooth low-frequency noise;
//! * a speaker whose hands swing about z with a raised-cosine bump centred on
//!   each beat (angle peak, hence a speed minimum, on the beat) over a slow
//!   sway;
//! * a listener whose head nods about x by `gain · NOD_SCALE` times the
//!   speaker's hand angle `listener_lag` frames earlier, plus independent
//!   idle hand sway.
//!
//! Roots never rotate, so feet stay planted except during an optional
//! scripted step that slides and lifts the root.

pub mod dataset;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::condition::ConditionTrack;
use crate::error::{Error, Result};
use crate::motion::{MotionSequence, PairedInteraction, Quat, RoleLabel, Skeleton};
use crate::tensor::Matrix;

pub use dataset::{
    build_dataset, ingest_external, load_dataset, write_dataset, Dataset, DatasetEntry,
    ManifestRecord, Split,
};

/// Decay constant of the beat envelope, in frames.
pub const ENVELOPE_DECAY: f64 = 2.0;
/// Half-width of the hand bump around each beat, in frames.
pub const BUMP_HALF_WIDTH: f64 = 3.0;
/// Peak hand swing for an accent of 1, in radians.
pub const HAND_AMPLITUDE: f64 = 0.6;
/// Listener nod angle per radian of speaker hand swing, before the gain.
pub const NOD_SCALE: f64 = 0.5;
pub const SWAY_AMPLITUDE: f64 = 0.05;
pub const STEP_FRAMES: usize = 8;
pub const STEP_DISTANCE: f64 = 0.15;
pub const STEP_LIFT: f64 = 0.08;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub sample_count: usize,
    pub frame_count: usize,
    pub fps: f64,
    pub bpm_min: f64,
    pub bpm_max: f64,
    /// Frames by which the listener's nod trails the speaker's hands.
    pub listener_lag: usize,
    pub listener_gain: f64,
    /// Standard deviation of per-frame rotation noise, in radians.
    pub noise_level: f64,
    pub cond_channels: usize,
    /// Swap gesturing and nodding between the two tracks halfway through.
    pub role_switch: bool,
    /// Chance per track of one scripted step.
    pub step_probability: f64,
    pub skeleton: Skeleton,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            sample_count: 100,
            frame_count: 48,
            fps: 30.0,
            bpm_min: 100.0,
            bpm_max: 160.0,
            listener_lag: 4,
            listener_gain: 0.8,
            noise_level: 0.005,
            cond_channels: 4,
            role_switch: false,
            step_probability: 0.3,
            skeleton: Skeleton::desk(),
        }
    }
}

/// Joints the generator animates.
struct Rig {
    head: usize,
    hands: [usize; 2],
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, why: String| Err(Error::invalid(format!("synth.{field} {why}")));
        if self.sample_count == 0 {
            return fail("sample_count", "must be ≥ 1".into());
        }
        if self.frame_count < 2 {
            return fail("frame_count", "must be ≥ 2".into());
        }
        if self.frame_count < 2 * self.listener_lag {
            return fail(
                "listener_lag",
                format!("{} exceeds half of frame_count {}", self.listener_lag, self.frame_count),
            );
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return fail("fps", "must be positive".into());
        }
        if !(self.bpm_min > 0.0 && self.bpm_min <= self.bpm_max && self.bpm_max.is_finite()) {
            return fail("bpm_min", "and synth.bpm_max must satisfy 0 < min ≤ max".into());
        }
        if !(self.listener_gain > 0.0 && self.listener_gain <= 1.0) {
            return fail("listener_gain", "must lie in (0, 1]".into());
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return fail("noise_level", "must be ≥ 0".into());
        }
        if self.cond_channels == 0 {
            return fail("cond_channels", "must be ≥ 1".into());
        }
        if !(0.0..=1.0).contains(&self.step_probability) {
            return fail("step_probability", "must lie in [0, 1]".into());
        }
        self.rig().map(|_| ())
    }

    fn rig(&self) -> Result<Rig> {
        let find = |name: &str| {
            self.skeleton.joint_index(name).ok_or_else(|| {
                Error::invalid(format!("synth.skeleton has no joint named `{name}`"))
            })
        };
        let rig = Rig {
            head: find("head")?,
            hands: [find("left_hand")?, find("right_hand")?],
        };
        if self.skeleton.parents()[rig.head] == -1 {
            return Err(Error::invalid("synth.skeleton: `head` must not be the root"));
        }
        Ok(rig)
    }
}

/// Frames `round(offset + k · fps · 60 / bpm)` inside `[0, frame_count)`.
pub fn beat_frames(frame_count: usize, bpm: f64, fps: f64, offset: f64) -> Vec<usize> {
    let period = fps * 60.0 / bpm;
    (0..)
        .map(|k| (offset + k as f64 * period).round())
        .take_while(|&b| b < frame_count as f64)
        .map(|b| b as usize)
        .collect()
}

/// Condition track with beats at `fps · 60 / bpm` intervals from frame 0.
pub fn gen_condition(
    seed: u64,
    frame_count: usize,
    bpm: f64,
    fps: f64,
    channels: usize,
) -> Result<ConditionTrack> {
    if !(bpm > 0.0 && fps > 0.0) {
        return Err(Error::invalid("bpm and fps must be positive"));
    }
    if channels == 0 || frame_count == 0 {
        return Err(Error::invalid("condition needs at least one frame and channel"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beats = beat_frames(frame_count, bpm, fps, 0.0);
    let accents: Vec<f64> = beats.iter().map(|_| rng.random_range(0.5..=1.0)).collect();
    condition_track(&mut rng, frame_count, fps, channels, &beats, &accents)
}

/// Max over earlier beats of `accent · exp(−(f − b)/ENVELOPE_DECAY)`.
pub fn beat_envelope(frame_count: usize, beats: &[usize], accents: &[f64]) -> Vec<f64> {
    (0..frame_count)
        .map(|f| {
            beats
                .iter()
                .zip(accents)
                .filter(|(&b, _)| b <= f)
                .map(|(&b, &a)| a * (-((f - b) as f64) / ENVELOPE_DECAY).exp())
                .fold(0.0, f64::max)
        })
        .collect()
}

fn condition_track(
    rng: &mut ChaCha8Rng,
    frame_count: usize,
    fps: f64,
    channels: usize,
    beats: &[usize],
    accents: &[f64],
) -> Result<ConditionTrack> {
    let envelope = beat_envelope(frame_count, beats, accents);
    let mut m = Matrix::zeros(frame_count, channels);
    for (f, &e) in envelope.iter().enumerate() {
        m.set(f, 0, e);
    }
    for c in 1..channels {
        // three sinusoids between 0.2 and 2 Hz
        let waves: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.random_range(0.1..0.3),
                    rng.random_range(0.2..2.0),
                    rng.random_range(0.0..2.0 * PI),
                )
            })
            .collect();
        for f in 0..frame_count {
            let t = f as f64 / fps;
            let v: f64 = waves
                .iter()
                .map(|&(a, hz, ph)| a * (2.0 * PI * hz * t + ph).sin())
                .sum();
            m.set(f, c, v);
        }
    }
    ConditionTrack::new(m, fps)
}

/// Raised cosine of half-width [`BUMP_HALF_WIDTH`] centred at 0.
fn bump(d: f64) -> f64 {
    if d.abs() >= BUMP_HALF_WIDTH {
        0.0
    } else {
        0.5 * (1.0 + (PI * d / BUMP_HALF_WIDTH).cos())
    }
}

/// Speaker hand angle at (possibly negative) frame `f`.
struct HandCurve {
    beats: Vec<usize>,
    accents: Vec<f64>,
    sway_hz: f64,
    sway_phase: f64,
    fps: f64,
}

impl HandCurve {
    fn angle(&self, f: i64) -> f64 {
        let beat: f64 = self
            .beats
            .iter()
            .zip(&self.accents)
            .map(|(&b, &a)| a * HAND_AMPLITUDE * bump(f as f64 - b as f64))
            .sum();
        let t = f as f64 / self.fps;
        beat + SWAY_AMPLITUDE * (2.0 * PI * self.sway_hz * t + self.sway_phase).sin()
    }
}

/// Slow independent sway: (amplitude, Hz, phase).
fn idle(rng: &mut ChaCha8Rng, amplitude: f64) -> (f64, f64, f64) {
    (
        amplitude,
        rng.random_range(0.2..0.6),
        rng.random_range(0.0..2.0 * PI),
    )
}

fn idle_angle((a, hz, ph): (f64, f64, f64), f: usize, fps: f64) -> f64 {
    a * (2.0 * PI * hz * f as f64 / fps + ph).sin()
}

/// Root trajectory: standing at `home`, with an optional step.
fn root_track(rng: &mut ChaCha8Rng, spec: &SynthSpec, home: [f64; 3]) -> Vec<[f64; 3]> {
    let f_count = spec.frame_count;
    let step = (rng.random::<f64>() < spec.step_probability && f_count > STEP_FRAMES)
        .then(|| rng.random_range(0..=f_count - 1 - STEP_FRAMES));
    (0..f_count)
        .map(|f| match step {
            Some(s) if f > s => {
                let u = ((f - s) as f64 / STEP_FRAMES as f64).min(1.0);
                [
                    home[0] + STEP_DISTANCE * 0.5 * (1.0 - (PI * u).cos()),
                    home[1] + STEP_LIFT * (PI * u).sin(),
                    home[2],
                ]
            }
            _ => home,
        })
        .collect()
}

fn noisy(rng: &mut ChaCha8Rng, q: Quat, level: f64) -> Quat {
    if level == 0.0 {
        return q;
    }
    let axis = [
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    ];
    let angle = level * rng.sample::<f64, _>(StandardNormal);
    q.mul(Quat::from_axis_angle(axis, angle)).normalized()
}

const Z: [f64; 3] = [0.0, 0.0, 1.0];
const X: [f64; 3] = [1.0, 0.0, 0.0];

/// Sample `index` of the synthetic set described by `spec`.
pub fn gen_pair(spec: &SynthSpec, index: usize) -> Result<PairedInteraction> {
    spec.validate()?;
    let rig = spec.rig()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    let (frames, fps) = (spec.frame_count, spec.fps);

    let bpm = if spec.bpm_min == spec.bpm_max {
        spec.bpm_min
    } else {
        rng.random_range(spec.bpm_min..spec.bpm_max)
    };
    let period = fps * 60.0 / bpm;
    let offset = rng.random_range(0.0..period);
    let beats = beat_frames(frames, bpm, fps, offset);
    let accents: Vec<f64> = beats.iter().map(|_| rng.random_range(0.5..=1.0)).collect();
    let condition = condition_track(&mut rng, frames, fps, spec.cond_channels, &beats, &accents)?;

    let hands = HandCurve {
        beats,
        accents,
        sway_hz: rng.random_range(0.2..0.6),
        sway_phase: rng.random_range(0.0..2.0 * PI),
        fps,
    };
    let speaker_head = idle(&mut rng, SWAY_AMPLITUDE);
    let listener_hands = [idle(&mut rng, 0.1), idle(&mut rng, 0.1)];
    let roots = [
        root_track(&mut rng, spec, [0.0, 0.9, 0.0]),
        root_track(&mut rng, spec, [1.5, 0.9, 0.0]),
    ];

    let joints = spec.skeleton.joint_count();
    let lag = spec.listener_lag as i64;
    let nod = spec.listener_gain * NOD_SCALE;
    let switch_at = if spec.role_switch { frames / 2 } else { frames };
    let mut rotations = [
        Vec::with_capacity(frames * joints),
        Vec::with_capacity(frames * joints),
    ];
    for f in 0..frames {
        let theta = hands.angle(f as i64);
        let mut gesture = vec![Quat::IDENTITY; joints];
        gesture[rig.hands[0]] = Quat::from_axis_angle(Z, theta);
        gesture[rig.hands[1]] = Quat::from_axis_angle(Z, -theta);
        gesture[rig.head] = Quat::from_axis_angle(X, idle_angle(speaker_head, f, fps));
        let mut respond = vec![Quat::IDENTITY; joints];
        respond[rig.head] = Quat::from_axis_angle(X, nod * hands.angle(f as i64 - lag));
        respond[rig.hands[0]] = Quat::from_axis_angle(Z, idle_angle(listener_hands[0], f, fps));
        respond[rig.hands[1]] = Quat::from_axis_angle(Z, -idle_angle(listener_hands[1], f, fps));
        let (a, b) = if f < switch_at {
            (gesture, respond)
        } else {
            (respond, gesture)
        };
        for (track, pose) in rotations.iter_mut().zip([a, b]) {
            for (j, q) in pose.into_iter().enumerate() {
                let root = spec.skeleton.parents()[j] == -1;
                track.push(if root { q } else { noisy(&mut rng, q, spec.noise_level) });
            }
        }
    }
    let [rot_s, rot_l] = rotations;
    let [root_s, root_l] = roots;
    let speaker = MotionSequence::new(spec.skeleton.clone(), fps, RoleLabel::Speaker, root_s, rot_s)?;
    let listener =
        MotionSequence::new(spec.skeleton.clone(), fps, RoleLabel::Listener, root_l, rot_l)?;
    PairedInteraction::new(speaker, listener, condition)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beat_period_follows_tempo() {
        assert_eq!(beat_frames(100, 60.0, 30.0, 0.0), vec![0, 30, 60, 90]);
        let c = gen_condition(3, 100, 60.0, 30.0, 3).unwrap();
        assert_eq!(c.beat_frames(0.4), vec![0, 30, 60, 90]);
    }

    #[test]
    fn envelope_peaks_on_beats() {
        let c = gen_condition(9, 120, 90.0, 30.0, 2).unwrap();
        let env = c.channel(0);
        let beats = beat_frames(120, 90.0, 30.0, 0.0);
        assert!(env.iter().all(|&v| v >= 0.0));
        for w in beats.windows(2) {
            let seg = &env[w[0]..w[1]];
            let argmax = seg
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax, 0);
        }
    }

    #[test]
    fn same_seed_same_track() {
        assert_eq!(
            gen_condition(5, 50, 120.0, 30.0, 4).unwrap(),
            gen_condition(5, 50, 120.0, 30.0, 4).unwrap()
        );
        assert_ne!(
            gen_condition(5, 50, 120.0, 30.0, 4).unwrap(),
            gen_condition(6, 50, 120.0, 30.0, 4).unwrap()
        );
    }

    #[test]
    fn pairs_are_deterministic_and_index_dependent() {
        let spec = SynthSpec::default();
        assert_eq!(gen_pair(&spec, 3).unwrap(), gen_pair(&spec, 3).unwrap());
        assert_ne!(gen_pair(&spec, 3).unwrap(), gen_pair(&spec, 4).unwrap());
        let p = gen_pair(&spec, 0).unwrap();
        assert_eq!(p.frame_count(), 48);
        assert_eq!(p.speaker().feature_dim(), 23);
    }

    #[test]
    fn invalid_specs_name_the_field() {
        let spec = SynthSpec {
            listener_lag: 30,
            ..SynthSpec::default()
        };
        assert!(spec.validate().unwrap_err().to_string().contains("listener_lag"));
        let spec = SynthSpec {
            listener_gain: 0.0,
            ..SynthSpec::default()
        };
        assert!(spec.validate().unwrap_err().to_string().contains("listener_gain"));
    }
}
