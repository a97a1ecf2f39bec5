use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Mean over unordered pairs of the per-element mean absolute difference.
pub fn diversity(samples: &[Matrix]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::invalid(format!(
            "diversity needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let shape = samples[0].shape();
    if samples.iter().any(|s| s.shape() != shape) || samples[0].is_empty() {
        return Err(Error::shape("diversity", "samples must share a nonempty shape"));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            let l1: f64 = samples[i]
                .data()
                .iter()
                .zip(samples[j].data())
                .map(|(a, b)| (a - b).abs())
                .sum();
            total += l1 / samples[i].len() as f64;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}
