//! Flattened, normalized training samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{flatten, PairedInteraction, RoleLabel, Skeleton};
use crate::tensor::Matrix;
use crate::training::loss::contact_mask;

/// Standard deviations below this are clamped so constant channels map to 0.
pub const STD_FLOOR: f64 = 0.05;

/// Per-channel affine map between raw motion features and the zero-mean,
/// unit-variance space the diffusion runs in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl FeatureNormalizer {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() || mean.is_empty() {
            return Err(Error::invalid(format!(
                "normalizer has {} means and {} deviations",
                mean.len(),
                std.len()
            )));
        }
        if mean.iter().chain(&std).any(|v| !v.is_finite()) || std.iter().any(|&s| s <= 0.0) {
            return Err(Error::invalid("normalizer values must be finite with positive deviations"));
        }
        Ok(Self { mean, std })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Moments over every row of every matrix.
    pub fn fit<'a>(features: impl IntoIterator<Item = &'a Matrix>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for m in features {
            if sum.is_empty() {
                sum = vec![0.0; m.cols()];
                sq = vec![0.0; m.cols()];
            }
            if m.cols() != sum.len() {
                return Err(Error::shape(
                    "FeatureNormalizer::fit",
                    format!("{} columns after {}", m.cols(), sum.len()),
                ));
            }
            for r in 0..m.rows() {
                for (c, &v) in m.row(r).iter().enumerate() {
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            n += m.rows();
        }
        if n == 0 {
            return Err(Error::invalid("cannot fit a normalizer to no frames"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / n as f64 - m * m).max(0.0).sqrt().max(STD_FLOOR))
            .collect();
        Self::new(mean, std)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn normalize(&self, x: &Matrix) -> Result<Matrix> {
        self.check(x)?;
        Ok(Matrix::from_fn(x.rows(), x.cols(), |r, c| {
            (x.get(r, c) - self.mean[c]) / self.std[c]
        }))
    }

    pub fn denormalize(&self, x: &Matrix) -> Result<Matrix> {
        self.check(x)?;
        Ok(Matrix::from_fn(x.rows(), x.cols(), |r, c| {
            x.get(r, c) * self.std[c] + self.mean[c]
        }))
    }

    fn check(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(Error::shape(
                "FeatureNormalizer",
                format!("{} columns, normalizer has {}", x.cols(), self.dim()),
            ));
        }
        Ok(())
    }
}

/// One paired sample ready for training.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    /// Normalized motion features, indexed by role.
    pub x0: [Matrix; 2],
    pub cond: Matrix,
    /// Foot contacts of the reference motion, indexed by role.
    pub contacts: [Vec<Vec<bool>>; 2],
}

#[derive(Clone, Debug)]
pub struct TrainingSet {
    samples: Vec<PreparedSample>,
    normalizer: FeatureNormalizer,
    skeleton: Skeleton,
    frames: usize,
    cond_dim: usize,
    fps: f64,
}

impl TrainingSet {
    /// Fits a normalizer to `pairs` and prepares them with it.
    pub fn new(pairs: &[PairedInteraction]) -> Result<Self> {
        let flat: Vec<[Matrix; 2]> = pairs
            .iter()
            .map(|p| [flatten(p.speaker()), flatten(p.listener())])
            .collect();
        let normalizer = FeatureNormalizer::fit(flat.iter().flatten())?;
        Self::with_normalizer(pairs, normalizer)
    }

    pub fn with_normalizer(pairs: &[PairedInteraction], normalizer: FeatureNormalizer) -> Result<Self> {
        let first = pairs
            .first()
            .ok_or_else(|| Error::invalid("training set is empty"))?;
        let frames = first.frame_count();
        let skeleton = first.speaker().skeleton().clone();
        let cond_dim = first.condition().channels();
        let fps = first.speaker().fps();
        let mut samples = Vec::with_capacity(pairs.len());
        for (i, p) in pairs.iter().enumerate() {
            if p.frame_count() != frames {
                return Err(Error::invalid(format!(
                    "sample {i} has {} frames, expected {frames}; retime samples to a common length",
                    p.frame_count()
                )));
            }
            if p.speaker().skeleton() != &skeleton || p.condition().channels() != cond_dim {
                return Err(Error::invalid(format!(
                    "sample {i} differs in skeleton or condition channels from sample 0"
                )));
            }
            let roles = [RoleLabel::Speaker, RoleLabel::Listener];
            samples.push(PreparedSample {
                x0: [
                    normalizer.normalize(&flatten(p.motion(roles[0])))?,
                    normalizer.normalize(&flatten(p.motion(roles[1])))?,
                ],
                cond: p.condition().features().clone(),
                contacts: [contact_mask(p.motion(roles[0])), contact_mask(p.motion(roles[1]))],
            });
        }
        Ok(Self {
            samples,
            normalizer,
            skeleton,
            frames,
            cond_dim,
            fps,
        })
    }

    pub fn samples(&self) -> &[PreparedSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn normalizer(&self) -> &FeatureNormalizer {
        &self.normalizer
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }
}
