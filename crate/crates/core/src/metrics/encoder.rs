//! Autoencoder over fixed-length motion windows whose bottleneck provides
//! the features compared by the Fréchet gesture distance.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::frechet::{frechet_distance, GaussianSummary};
use crate::motion::{flatten, MotionSequence};
use crate::nn::blocks::{linear, linear_specs};
use crate::nn::params::{init_params, ParamSet};
use crate::nn::tape::Tape;
use crate::tensor::Matrix;
use crate::training::{adam_step, AdamHyper, AdamState, FeatureNormalizer};

/// Fewest training windows accepted.
pub const MIN_WINDOWS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub window: usize,
    pub stride: usize,
    pub hidden: usize,
    pub latent: usize,
    /// Full-batch Adam steps.
    pub steps: usize,
    pub lr: f64,
    /// Fraction of windows held out for the quality report.
    pub holdout: f64,
    /// Random projections drawn for the baseline.
    pub baseline_draws: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            window: 30,
            stride: 10,
            hidden: 64,
            latent: 32,
            steps: 300,
            lr: 2e-3,
            holdout: 0.1,
            baseline_draws: 20,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderReport {
    /// Training reconstruction error before each of `steps / 10 + 1`
    /// evenly spaced checkpoints, the last one after training.
    pub history: Vec<f64>,
    pub heldout_error: f64,
    /// Held-out error of orthogonal projection onto random `latent`-dim
    /// subspaces, one per draw.
    pub baseline_errors: Vec<f64>,
    pub baseline_p90: f64,
}

impl EncoderReport {
    pub fn beats_baseline(&self) -> bool {
        self.heldout_error < self.baseline_p90
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureEncoder {
    config: EncoderConfig,
    normalizer: FeatureNormalizer,
    params: ParamSet,
}

/// Flattened windows of `window` frames every `stride` frames, one row each.
pub fn motion_windows(m: &MotionSequence, window: usize, stride: usize) -> Result<Vec<Vec<f64>>> {
    if window == 0 || stride == 0 {
        return Err(Error::invalid("window and stride must be ≥ 1"));
    }
    let flat = flatten(m);
    if flat.rows() < window {
        return Err(Error::invalid(format!(
            "motion has {} frames, shorter than the {window}-frame window",
            flat.rows()
        )));
    }
    Ok((0..=flat.rows() - window)
        .step_by(stride)
        .map(|start| flat.data()[start * flat.cols()..(start + window) * flat.cols()].to_vec())
        .collect())
}

fn window_matrix(motions: &[&MotionSequence], window: usize, stride: usize) -> Result<Matrix> {
    let mut rows = Vec::new();
    for m in motions {
        rows.extend(motion_windows(m, window, stride)?);
    }
    if rows.is_empty() {
        return Err(Error::invalid("no motion windows"));
    }
    Matrix::from_rows(&rows)
}

fn specs(cfg: &EncoderConfig, dim: usize) -> Vec<crate::nn::params::ParamSpec> {
    [
        linear_specs("enc.l1", dim, cfg.hidden),
        linear_specs("enc.l2", cfg.hidden, cfg.latent),
        linear_specs("dec.l1", cfg.latent, cfg.hidden),
        linear_specs("dec.l2", cfg.hidden, dim),
    ]
    .concat()
}

/// Mean squared reconstruction error of `x` (normalized windows).
fn autoencode_error(params: &ParamSet, x: &Matrix) -> Result<f64> {
    let mut tape = Tape::new();
    let pv = params.attach(&mut tape);
    let xv = tape.leaf(x.clone());
    let loss = reconstruction_loss(&mut tape, &pv, xv)?;
    Ok(tape.scalar(loss))
}

fn encode_vars(
    tape: &mut Tape,
    pv: &crate::nn::params::ParamVars,
    x: crate::nn::tape::Var,
) -> Result<crate::nn::tape::Var> {
    let h = linear(tape, pv, "enc.l1", x)?;
    let h = tape.silu(h);
    linear(tape, pv, "enc.l2", h)
}

fn reconstruction_loss(
    tape: &mut Tape,
    pv: &crate::nn::params::ParamVars,
    x: crate::nn::tape::Var,
) -> Result<crate::nn::tape::Var> {
    let z = encode_vars(tape, pv, x)?;
    let h = linear(tape, pv, "dec.l1", z)?;
    let h = tape.silu(h);
    let y = linear(tape, pv, "dec.l2", h)?;
    let diff = tape.sub(y, x)?;
    let sq = tape.sum_squares(diff);
    let (n, d) = tape.shape(x);
    Ok(tape.scale(sq, 1.0 / (n * d) as f64))
}

/// Held-out error of projecting onto a random `k`-dim subspace.
fn random_projection_error(heldout: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let d = heldout.cols();
    let r = nalgebra::DMatrix::from_row_slice(d, k, Matrix::randn(d, k, rng).data());
    let q = r.qr().q();
    let x = nalgebra::DMatrix::from_row_slice(heldout.rows(), d, heldout.data());
    let proj = &x * &q * q.transpose();
    Ok((x - proj).norm_squared() / heldout.len() as f64)
}

fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (p * (v.len() - 1) as f64).round() as usize;
    v[rank]
}

/// Trains an encoder on every window of `motions`, holding out a seeded
/// fraction for the report.
pub fn train_feature_encoder(
    motions: &[&MotionSequence],
    config: &EncoderConfig,
) -> Result<(FeatureEncoder, EncoderReport)> {
    if config.latent == 0 || config.hidden == 0 || config.steps == 0 {
        return Err(Error::invalid("encoder sizes and steps must be ≥ 1"));
    }
    if !(0.0..1.0).contains(&config.holdout) {
        return Err(Error::invalid("encoder holdout must lie in [0, 1)"));
    }
    let all = window_matrix(motions, config.window, config.stride)?;
    if all.rows() < MIN_WINDOWS {
        return Err(Error::invalid(format!(
            "{} motion windows; the encoder needs at least {MIN_WINDOWS}",
            all.rows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..all.rows()).collect();
    order.shuffle(&mut rng);
    let n_hold = ((config.holdout * all.rows() as f64).round() as usize).max(1);
    let pick = |idx: &[usize]| {
        Matrix::from_rows(&idx.iter().map(|&i| all.row(i).to_vec()).collect::<Vec<_>>())
    };
    let (hold_raw, train_raw) = (pick(&order[..n_hold])?, pick(&order[n_hold..])?);
    let normalizer = FeatureNormalizer::fit([&train_raw])?;
    let train = normalizer.normalize(&train_raw)?;
    let heldout = normalizer.normalize(&hold_raw)?;

    let mut params = init_params(&specs(config, all.cols()), config.seed)?;
    let hyper = AdamHyper {
        lr: config.lr,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 0.0,
    };
    let mut adam = AdamState::default();
    let mut history = Vec::new();
    let every = (config.steps / 10).max(1);
    for step in 0..config.steps {
        let mut tape = Tape::new();
        let pv = params.attach(&mut tape);
        let x = tape.leaf(train.clone());
        let loss = reconstruction_loss(&mut tape, &pv, x)?;
        if step % every == 0 {
            history.push(tape.scalar(loss));
        }
        let mut grads = tape.backward(loss)?;
        let named = pv.collect_grads(&tape, &mut grads);
        adam_step(&mut params, &named, &mut adam, &hyper)?;
    }
    history.push(autoencode_error(&params, &train)?);
    let heldout_error = autoencode_error(&params, &heldout)?;
    let baseline_errors = (0..config.baseline_draws.max(1))
        .map(|_| random_projection_error(&heldout, config.latent, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let baseline_p90 = percentile(&baseline_errors, 0.9);
    Ok((
        FeatureEncoder {
            config: config.clone(),
            normalizer,
            params,
        },
        EncoderReport {
            history,
            heldout_error,
            baseline_errors,
            baseline_p90,
        },
    ))
}

impl FeatureEncoder {
    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.config.latent
    }

    /// Latent features of every window, one row each.
    pub fn encode(&self, motions: &[&MotionSequence]) -> Result<Matrix> {
        let raw = window_matrix(motions, self.config.window, self.config.stride)?;
        if raw.cols() != self.normalizer.dim() {
            return Err(Error::shape(
                "FeatureEncoder::encode",
                format!(
                    "windows have {} values, encoder expects {}",
                    raw.cols(),
                    self.normalizer.dim()
                ),
            ));
        }
        let x = self.normalizer.normalize(&raw)?;
        let mut tape = Tape::new();
        let pv = self.params.attach(&mut tape);
        let xv = tape.leaf(x);
        let z = encode_vars(&mut tape, &pv, xv)?;
        Ok(tape.value(z).clone())
    }

    /// Mean squared reconstruction error over every window, normalized.
    pub fn reconstruction_error(&self, motions: &[&MotionSequence]) -> Result<f64> {
        let raw = window_matrix(motions, self.config.window, self.config.stride)?;
        autoencode_error(&self.params, &self.normalizer.normalize(&raw)?)
    }
}

/// Fréchet distance between the Gaussian fits of encoded windows.
pub fn fgd(
    real: &[&MotionSequence],
    generated: &[&MotionSequence],
    encoder: &FeatureEncoder,
) -> Result<f64> {
    if real.is_empty() || generated.is_empty() {
        return Err(Error::invalid("fgd needs nonempty real and generated sets"));
    }
    let a = GaussianSummary::fit(&encoder.encode(real)?)?;
    let b = GaussianSummary::fit(&encoder.encode(generated)?)?;
    frechet_distance(&a, &b)
}
