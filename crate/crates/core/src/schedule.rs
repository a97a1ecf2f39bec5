//! Noise schedule, forward process, x₀/ε conversions, guidance and the
//! DDPM/DDIM reverse steps.
//!
//! Timesteps are zero-based: `t ∈ [0, T)`, with `alpha_bar(-1) = 1` used for
//! the final step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::invalid("schedule needs at least one timestep"));
        }
        if let Some(b) = betas.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::invalid(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// Betas spaced linearly from `beta_start` to `beta_end`, both included.
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps == 0 {
            return Err(Error::invalid("timesteps must be ≥ 1"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < beta_start ≤ beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let betas = if timesteps == 1 {
            vec![beta_start]
        } else {
            let step = (beta_end - beta_start) / (timesteps - 1) as f64;
            (0..timesteps)
                .map(|i| {
                    if i == timesteps - 1 {
                        beta_end
                    } else {
                        beta_start + step * i as f64
                    }
                })
                .collect()
        };
        Self::from_betas(betas)
    }

    pub fn timesteps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// `alpha_bar(t - 1)`, which is 1 before the first step.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Variance of q(x_{t-1} | x_t, x₀): (1 − ᾱ_{t−1}) / (1 − ᾱ_t) · β_t.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar_prev(t)) / (1.0 - self.alpha_bars[t]) * self.betas[t]
    }

    /// Coefficients (c_x0, c_xt) of the posterior mean c_x0·x₀ + c_xt·x_t.
    pub fn posterior_mean_coefs(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bars[t];
        let ab_prev = self.alpha_bar_prev(t);
        (
            ab_prev.sqrt() * self.betas[t] / (1.0 - ab),
            self.alphas[t].sqrt() * (1.0 - ab_prev) / (1.0 - ab),
        )
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t < self.timesteps() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "timestep {t} out of range for T = {}",
                self.timesteps()
            )))
        }
    }

    /// Marginal forward sample x_t = √ᾱ_t·x₀ + √(1−ᾱ_t)·ε.
    pub fn q_sample(&self, x0: &Matrix, t: usize, eps: &Matrix) -> Result<Matrix> {
        self.check_t(t)?;
        let ab = self.alpha_bars[t];
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        x0.zip_map(eps, |x, e| a * x + b * e)
    }

    /// Noise implied by a clean estimate: ε = (x_t − √ᾱ_t·x₀) / √(1−ᾱ_t).
    pub fn x0_to_eps(&self, x_t: &Matrix, x0_hat: &Matrix, t: usize) -> Result<Matrix> {
        self.check_t(t)?;
        let ab = self.alpha_bars[t];
        let denom = (1.0 - ab).sqrt();
        let a = ab.sqrt();
        if denom == 0.0 {
            let residual = x_t.zip_map(x0_hat, |x, y| x - a * y)?;
            if residual.max_abs() != 0.0 {
                return Err(Error::DegenerateTimestep { t });
            }
            return Ok(Matrix::zeros(x_t.rows(), x_t.cols()));
        }
        x_t.zip_map(x0_hat, |x, y| (x - a * y) / denom)
    }

    /// Clean estimate implied by a noise estimate: x₀ = (x_t − √(1−ᾱ_t)·ε) / √ᾱ_t.
    pub fn eps_to_x0(&self, x_t: &Matrix, eps_hat: &Matrix, t: usize) -> Result<Matrix> {
        self.check_t(t)?;
        let ab = self.alpha_bars[t];
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        x_t.zip_map(eps_hat, |x, e| (x - b * e) / a)
    }

    /// One ancestral step from the posterior q(x_{t−1} | x_t, x̂₀). At t = 0
    /// the clean estimate itself is returned, without noise.
    pub fn ddpm_step<R: Rng + ?Sized>(
        &self,
        x_t: &Matrix,
        x0_hat: &Matrix,
        t: usize,
        rng: &mut R,
    ) -> Result<Matrix> {
        self.check_t(t)?;
        if !x_t.same_shape(x0_hat) {
            return Err(Error::shape(
                "ddpm_step",
                format!("{:?} vs {:?}", x_t.shape(), x0_hat.shape()),
            ));
        }
        if t == 0 {
            return Ok(x0_hat.clone());
        }
        let (cx0, cxt) = self.posterior_mean_coefs(t);
        let sigma = self.posterior_variance(t).sqrt();
        let noise = Matrix::randn(x_t.rows(), x_t.cols(), rng);
        let mut out = x0_hat.zip_map(x_t, |a, b| cx0 * a + cxt * b)?;
        out.add_scaled_assign(&noise, sigma)?;
        Ok(out)
    }

    /// DDIM step from `t` to `t_prev` (`None` means the final clean sample).
    /// `eta = 0` is deterministic; `eta = 1` reproduces the ancestral
    /// posterior when `t_prev = t − 1`.
    pub fn ddim_step<R: Rng + ?Sized>(
        &self,
        x_t: &Matrix,
        x0_hat: &Matrix,
        t: usize,
        t_prev: Option<usize>,
        eta: f64,
        rng: &mut R,
    ) -> Result<Matrix> {
        self.check_t(t)?;
        if let Some(tp) = t_prev {
            if tp >= t {
                return Err(Error::invalid(format!(
                    "ddim target timestep {tp} must precede {t}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::invalid(format!("eta must lie in [0, 1], got {eta}")));
        }
        let ab = self.alpha_bars[t];
        let ab_prev = t_prev.map_or(1.0, |tp| self.alpha_bars[tp]);
        let eps = self.x0_to_eps(x_t, x0_hat, t)?;
        let sigma = eta * ((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev)).sqrt();
        let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
        let a = ab_prev.sqrt();
        let mut out = x0_hat.zip_map(&eps, |x, e| a * x + dir * e)?;
        if sigma > 0.0 {
            let noise = Matrix::randn(x_t.rows(), x_t.cols(), rng);
            out.add_scaled_assign(&noise, sigma)?;
        }
        Ok(out)
    }
}

/// Guidance scale `s`; the unconditional branch uses the all-zero
/// condition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub scale: f64,
}

impl GuidanceConfig {
    pub fn new(scale: f64) -> Result<Self> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::invalid(format!(
                "guidance scale must be finite and ≥ 0, got {scale}"
            )));
        }
        Ok(Self { scale })
    }
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { scale: 2.5 }
    }
}

/// Guided noise ε_c + s·(ε_c − ε_u), i.e. (1+s)·ε_c − s·ε_u.
pub fn cfg_combine(eps_cond: &Matrix, eps_uncond: &Matrix, s: f64) -> Result<Matrix> {
    eps_cond.zip_map(eps_uncond, |c, u| c + s * (c - u))
}
