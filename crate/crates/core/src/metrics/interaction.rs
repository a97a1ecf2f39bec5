//! Lagged coupling between two motion energy signals.

use crate::error::{Error, Result};
use crate::motion::MotionSequence;

/// Mean angular speed over every non-root joint, per frame.
pub fn motion_energy(m: &MotionSequence) -> Vec<f64> {
    let joints: Vec<usize> = (0..m.skeleton().joint_count())
        .filter(|&j| m.skeleton().parents()[j] != -1)
        .collect();
    let mut energy = vec![0.0; m.frame_count()];
    for &j in &joints {
        for (e, s) in energy.iter_mut().zip(m.joint_angular_speed(j)) {
            *e += s / joints.len() as f64;
        }
    }
    energy
}

/// Mean angular speed over `joints`, per frame.
pub fn joint_energy(m: &MotionSequence, joints: &[usize]) -> Result<Vec<f64>> {
    if joints.is_empty() {
        return Err(Error::invalid("joint_energy needs at least one joint"));
    }
    let count = m.skeleton().joint_count();
    if let Some(&j) = joints.iter().find(|&&j| j >= count) {
        return Err(Error::invalid(format!("joint {j} out of range for {count} joints")));
    }
    let mut energy = vec![0.0; m.frame_count()];
    for &j in joints {
        for (e, s) in energy.iter_mut().zip(m.joint_angular_speed(j)) {
            *e += s / joints.len() as f64;
        }
    }
    Ok(energy)
}

/// Pearson correlation of `a[f]` with `b[f + lag]` over the overlap, for
/// every lag in `-max_lag..=max_lag`. A constant overlap correlates as 0.
pub fn cross_correlation(a: &[f64], b: &[f64], max_lag: usize) -> Result<Vec<(i64, f64)>> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "signals differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < max_lag + 2 {
        return Err(Error::invalid(format!(
            "{} samples cannot cover lags up to {max_lag}",
            a.len()
        )));
    }
    let n = a.len() as i64;
    let lags = -(max_lag as i64)..=max_lag as i64;
    Ok(lags
        .map(|lag| {
            let (start, end) = (0.max(-lag), n.min(n - lag));
            let xs: Vec<f64> = (start..end).map(|f| a[f as usize]).collect();
            let ys: Vec<f64> = (start..end).map(|f| b[(f + lag) as usize]).collect();
            (lag, pearson(&xs, &ys))
        })
        .collect())
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    let denom = (sxx * syy).sqrt();
    if denom > 0.0 {
        sxy / denom
    } else {
        0.0
    }
}

/// Lag at which the mean cross-correlation over `pairs` of (leader,
/// follower) signals peaks. Ties resolve to the smallest lag.
pub fn peak_lag(pairs: &[(Vec<f64>, Vec<f64>)], max_lag: usize) -> Result<i64> {
    if pairs.is_empty() {
        return Err(Error::invalid("peak_lag needs at least one signal pair"));
    }
    let mut mean = vec![0.0; 2 * max_lag + 1];
    for (a, b) in pairs {
        for (m, (_, c)) in mean.iter_mut().zip(cross_correlation(a, b, max_lag)?) {
            *m += c / pairs.len() as f64;
        }
    }
    let best = mean
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > mean[best] { i } else { best });
    Ok(best as i64 - max_lag as i64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shifted_signal_peaks_at_its_shift() {
        let a: Vec<f64> = (0..60).map(|i| ((i * 7919) % 13) as f64).collect();
        let b: Vec<f64> = (0..60).map(|i| if i >= 3 { a[i - 3] } else { 0.0 }).collect();
        let xc = cross_correlation(&a, &b, 6).unwrap();
        let (lag, c) = xc.iter().copied().fold((0, f64::MIN), |m, x| if x.1 > m.1 { x } else { m });
        assert_eq!(lag, 3);
        assert!((c - 1.0).abs() < 1e-12);
        assert_eq!(peak_lag(&[(a.clone(), b)], 6).unwrap(), 3);
        assert_eq!(peak_lag(&[(a.clone(), a)], 6).unwrap(), 0);
    }

    #[test]
    fn constant_signals_do_not_correlate() {
        let xc = cross_correlation(&[1.0; 10], &[2.0; 10], 2).unwrap();
        assert!(xc.iter().all(|&(_, c)| c == 0.0));
        assert!(cross_correlation(&[1.0; 3], &[1.0; 3], 2).is_err());
    }
}
