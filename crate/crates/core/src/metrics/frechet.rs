use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const SYMMETRY_TOLERANCE: f64 = 1e-9;
/// Most negative eigenvalue accepted (and clipped to 0) in a covariance.
pub const EIGEN_TOLERANCE: f64 = 1e-8;
/// Ridge added to covariances fitted from fewer samples than dimensions.
pub const SHRINKAGE: f64 = 1e-6;

/// Mean and covariance of a feature distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSummary {
    mean: Vec<f64>,
    cov: Matrix,
}

impl GaussianSummary {
    pub fn new(mean: Vec<f64>, cov: Matrix) -> Result<Self> {
        let n = mean.len();
        if n == 0 || cov.shape() != (n, n) {
            return Err(Error::shape(
                "GaussianSummary",
                format!("mean of length {n}, covariance {:?}", cov.shape()),
            ));
        }
        if !cov.is_finite() || mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite Gaussian summary".into()));
        }
        for r in 0..n {
            for c in 0..r {
                if (cov.get(r, c) - cov.get(c, r)).abs() > SYMMETRY_TOLERANCE {
                    return Err(Error::Numerical(format!(
                        "covariance is not symmetric at ({r}, {c})"
                    )));
                }
            }
        }
        let lowest = SymmetricEigen::new(to_nalgebra(&cov))
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if lowest < -EIGEN_TOLERANCE {
            return Err(Error::Numerical(format!(
                "covariance is not positive semidefinite (eigenvalue {lowest:e})"
            )));
        }
        Ok(Self { mean, cov })
    }

    /// Sample mean and unbiased covariance of the rows of `features`. With
    /// no more rows than columns the covariance gets a [`SHRINKAGE`] ridge.
    pub fn fit(features: &Matrix) -> Result<Self> {
        let (n, d) = features.shape();
        if n < 2 || d == 0 {
            return Err(Error::invalid(format!(
                "need at least 2 feature rows to fit a Gaussian, got {n}"
            )));
        }
        let mean: Vec<f64> = (0..d)
            .map(|c| features.column(c).iter().sum::<f64>() / n as f64)
            .collect();
        let centered = Matrix::from_fn(n, d, |r, c| features.get(r, c) - mean[c]);
        let mut cov = centered.t_matmul(&centered)?.scale(1.0 / (n - 1) as f64);
        // exact symmetry despite summation order
        for r in 0..d {
            for c in 0..r {
                let v = 0.5 * (cov.get(r, c) + cov.get(c, r));
                cov.set(r, c, v);
                cov.set(c, r, v);
            }
        }
        if n <= d {
            log::warn!("{n} feature rows for dimension {d}: covariance is rank deficient, adding {SHRINKAGE}·I");
            for i in 0..d {
                cov.set(i, i, cov.get(i, i) + SHRINKAGE);
            }
        }
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix {
        &self.cov
    }
}

fn to_nalgebra(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

/// Square root of a symmetric PSD matrix, clipping small negative
/// eigenvalues to 0.
fn sqrt_psd(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if let Some(v) = eig
        .eigenvalues
        .iter()
        .find(|&&v| v < -EIGEN_TOLERANCE * scale)
    {
        return Err(Error::Numerical(format!(
            "matrix square root of an indefinite matrix (eigenvalue {v:e})"
        )));
    }
    let roots = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()),
    );
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// ‖μa − μb‖² + tr(Σa) + tr(Σb) − 2·tr((Σa^½ Σb Σa^½)^½), clamped at 0.
pub fn frechet_distance(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(
            "frechet_distance",
            format!("dimensions {} and {}", a.dim(), b.dim()),
        ));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    let (sa, sb) = (to_nalgebra(&a.cov), to_nalgebra(&b.cov));
    let ra = sqrt_psd(sa.clone())?;
    let inner = &ra * &sb * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = sqrt_psd(inner)?.trace();
    Ok((mean_term + sa.trace() + sb.trace() - 2.0 * cross).max(0.0))
}
