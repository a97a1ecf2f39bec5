use crate::condition::ConditionTrack;
use crate::error::{Error, Result};
use crate::metrics::interaction::motion_energy;
use crate::motion::MotionSequence;

/// Audio beats are peaks of condition channel 0 above this fraction of its
/// maximum.
pub const AUDIO_BEAT_FRACTION: f64 = 0.1;

/// Kernel width in frames for a frame rate.
pub fn default_sigma(fps: f64) -> f64 {
    0.1 * fps
}

/// Interior frames where the mean joint angular speed has a local minimum
/// (strictly below the previous frame, not above the next).
pub fn gesture_beats(m: &MotionSequence) -> Vec<usize> {
    let e = motion_energy(m);
    (1..e.len().saturating_sub(1))
        .filter(|&f| e[f] < e[f - 1] && e[f] <= e[f + 1])
        .collect()
}

pub fn audio_beats(c: &ConditionTrack) -> Vec<usize> {
    let peak = c.channel(0).into_iter().fold(0.0, f64::max);
    c.beat_frames(AUDIO_BEAT_FRACTION * peak)
}

/// Mean over audio beats of `exp(−d²/(2σ²))`, with `d` the distance to the
/// nearest gesture beat. No gesture beats scores 0.
pub fn beat_align_times(audio: &[f64], gesture: &[f64], sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    if audio.is_empty() {
        return Err(Error::invalid("beat alignment needs at least one audio beat"));
    }
    if gesture.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = audio
        .iter()
        .map(|&a| {
            let d = gesture
                .iter()
                .map(|&g| (g - a).abs())
                .fold(f64::INFINITY, f64::min);
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .sum();
    Ok(total / audio.len() as f64)
}

pub fn beat_align(motion: &MotionSequence, condition: &ConditionTrack, sigma: f64) -> Result<f64> {
    if motion.frame_count() == 0 {
        return Err(Error::invalid("motion has zero frames"));
    }
    let as_f64 = |v: Vec<usize>| v.into_iter().map(|f| f as f64).collect::<Vec<_>>();
    beat_align_times(
        &as_f64(audio_beats(condition)),
        &as_f64(gesture_beats(motion)),
        sigma,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        assert_eq!(beat_align_times(&[3.0, 9.0], &[3.0, 9.0, 20.0], 2.0).unwrap(), 1.0);
        let v = beat_align_times(&[10.0], &[13.0], 3.0).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-12);
        assert_eq!(beat_align_times(&[1.0], &[], 3.0).unwrap(), 0.0);
        assert!(beat_align_times(&[], &[1.0], 3.0).is_err());
        assert!(beat_align_times(&[1.0], &[1.0], 0.0).is_err());
    }
}
