//! Reverse-process sampling of speaker/listener pairs with classifier-free
//! guidance.
//!
//! The predictor regresses x̂₀; guidance is applied to the implied noise
//! `ε = (x_t − √ᾱ·x̂₀)/√(1−ᾱ)` and mapped back to a clean estimate before
//! each step. The unconditional pass uses the all-zero condition and is
//! skipped when the scale is 0.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::condition::ConditionTrack;
use crate::denoiser::{split_condition, DenoiseItem, Denoiser, RoleInput};
use crate::error::{Error, Result};
use crate::motion::{unflatten, PairedInteraction, RoleLabel, Skeleton};
use crate::schedule::{cfg_combine, GuidanceConfig, NoiseSchedule};
use crate::tensor::Matrix;
use crate::training::{Checkpoint, FeatureNormalizer};

/// Anything that maps noisy pairs to clean estimates.
pub trait JointPredictor {
    /// x̂₀ as `[speaker, listener]` for each pair `x[i]` under the unsplit
    /// condition `cond[i]`, all at timestep `t`.
    fn predict(&self, t: usize, x: &[[Matrix; 2]], cond: &[Matrix]) -> Result<Vec<[Matrix; 2]>>;
}

impl JointPredictor for Denoiser {
    fn predict(&self, t: usize, x: &[[Matrix; 2]], cond: &[Matrix]) -> Result<Vec<[Matrix; 2]>> {
        if x.len() != cond.len() {
            return Err(Error::invalid(format!(
                "{} inputs for {} conditions",
                x.len(),
                cond.len()
            )));
        }
        let items = x
            .iter()
            .zip(cond)
            .map(|([xs, xl], c)| {
                let (cs, cl) = split_condition(c, self.config().lambda)?;
                Ok(DenoiseItem {
                    slots: [
                        RoleInput {
                            x_t: xs.clone(),
                            cond: cs,
                            role: RoleLabel::Speaker,
                        },
                        RoleInput {
                            x_t: xl.clone(),
                            cond: cl,
                            role: RoleLabel::Listener,
                        },
                    ],
                    t,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.denoise_batch(&items)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SamplerKind {
    /// Ancestral sampling over every timestep.
    Ddpm,
    /// DDIM over `steps` evenly spaced timesteps.
    Ddim { steps: usize, eta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub guidance: GuidanceConfig,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Ddpm,
            guidance: GuidanceConfig::default(),
        }
    }
}

/// Descending timesteps `round(i·(T−1)/(steps−1))`, deduplicated, ending at 0.
pub fn ddim_timesteps(timesteps: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > timesteps {
        return Err(Error::invalid(format!(
            "ddim steps must lie in [1, {timesteps}], got {steps}"
        )));
    }
    if steps == 1 {
        return Ok(vec![timesteps - 1]);
    }
    let mut ts: Vec<usize> = (0..steps)
        .map(|i| (i as f64 * (timesteps - 1) as f64 / (steps - 1) as f64).round() as usize)
        .collect();
    ts.dedup();
    ts.reverse();
    Ok(ts)
}

/// Guided clean estimates for every pair at timestep `t`.
fn guided_x0<P: JointPredictor + ?Sized>(
    predictor: &P,
    schedule: &NoiseSchedule,
    t: usize,
    x: &[[Matrix; 2]],
    cond: &[Matrix],
    scale: f64,
) -> Result<Vec<[Matrix; 2]>> {
    if scale == 0.0 {
        return predictor.predict(t, x, cond);
    }
    // conditional and unconditional passes share one batch
    let mut xs = x.to_vec();
    xs.extend_from_slice(x);
    let mut cs = cond.to_vec();
    cs.extend(cond.iter().map(|c| Matrix::zeros(c.rows(), c.cols())));
    let mut out = predictor.predict(t, &xs, &cs)?;
    let uncond = out.split_off(x.len());
    out.iter()
        .zip(&uncond)
        .zip(x)
        .map(|((c, u), xt)| {
            let mut guided = Vec::with_capacity(2);
            for r in 0..2 {
                let eps_c = schedule.x0_to_eps(&xt[r], &c[r], t)?;
                let eps_u = schedule.x0_to_eps(&xt[r], &u[r], t)?;
                let eps = cfg_combine(&eps_c, &eps_u, scale)?;
                guided.push(schedule.eps_to_x0(&xt[r], &eps, t)?);
            }
            let l = guided.pop().expect("two roles");
            let s = guided.pop().expect("two roles");
            Ok([s, l])
        })
        .collect()
}

/// Runs the reverse process from x_T ~ N(0, I) for one pair per condition.
/// Each pair's starting noise is drawn speaker first, in condition order.
pub fn sample_pairs<P: JointPredictor + ?Sized>(
    predictor: &P,
    schedule: &NoiseSchedule,
    cond: &[Matrix],
    motion_dim: usize,
    config: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<[Matrix; 2]>> {
    let scale = GuidanceConfig::new(config.guidance.scale)?.scale;
    let mut x: Vec<[Matrix; 2]> = cond
        .iter()
        .map(|c| {
            [
                Matrix::randn(c.rows(), motion_dim, rng),
                Matrix::randn(c.rows(), motion_dim, rng),
            ]
        })
        .collect();
    let plan: Vec<(usize, Option<usize>)> = match config.kind {
        SamplerKind::Ddpm => (0..schedule.timesteps())
            .rev()
            .map(|t| (t, t.checked_sub(1)))
            .collect(),
        SamplerKind::Ddim { steps, .. } => {
            let ts = ddim_timesteps(schedule.timesteps(), steps)?;
            (0..ts.len()).map(|i| (ts[i], ts.get(i + 1).copied())).collect()
        }
    };
    for (t, t_prev) in plan {
        let x0 = guided_x0(predictor, schedule, t, &x, cond, scale)?;
        for (xi, x0i) in x.iter_mut().zip(&x0) {
            for r in 0..2 {
                xi[r] = match config.kind {
                    SamplerKind::Ddpm => schedule.ddpm_step(&xi[r], &x0i[r], t, rng)?,
                    SamplerKind::Ddim { eta, .. } => {
                        schedule.ddim_step(&xi[r], &x0i[r], t, t_prev, eta, rng)?
                    }
                };
            }
        }
    }
    Ok(x)
}

/// A trained model with everything needed to emit motion files.
#[derive(Clone, Debug)]
pub struct Generator {
    model: Denoiser,
    schedule: NoiseSchedule,
    normalizer: FeatureNormalizer,
    skeleton: Skeleton,
    fps: f64,
}

impl Generator {
    pub fn new(
        model: Denoiser,
        schedule: NoiseSchedule,
        normalizer: FeatureNormalizer,
        skeleton: Skeleton,
        fps: f64,
    ) -> Result<Self> {
        if schedule.timesteps() != model.config().timesteps {
            return Err(Error::invalid(format!(
                "schedule has {} timesteps, model expects {}",
                schedule.timesteps(),
                model.config().timesteps
            )));
        }
        if normalizer.dim() != model.config().motion_dim
            || skeleton.feature_dim() != model.config().motion_dim
        {
            return Err(Error::invalid("normalizer, skeleton and model disagree on D"));
        }
        Ok(Self {
            model,
            schedule,
            normalizer,
            skeleton,
            fps,
        })
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        Self::new(
            Denoiser::from_params(c.model.clone(), c.params.clone())?,
            c.schedule.clone(),
            c.normalizer.clone(),
            c.skeleton.clone(),
            c.fps,
        )
    }

    pub fn model(&self) -> &Denoiser {
        &self.model
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    /// One generated pair per condition track, all from one stream seeded
    /// with `seed`.
    pub fn generate(
        &self,
        conditions: &[&ConditionTrack],
        config: &SamplerConfig,
        seed: u64,
    ) -> Result<Vec<PairedInteraction>> {
        if conditions.is_empty() {
            return Err(Error::invalid("nothing to generate: no conditions"));
        }
        let a = self.model.config().cond_dim;
        if let Some(c) = conditions.iter().find(|c| c.channels() != a) {
            return Err(Error::invalid(format!(
                "condition has {} channels, model expects {a}",
                c.channels()
            )));
        }
        let cond: Vec<Matrix> = conditions.iter().map(|c| c.features().clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = sample_pairs(
            &self.model,
            &self.schedule,
            &cond,
            self.model.config().motion_dim,
            config,
            &mut rng,
        )?;
        pairs
            .into_iter()
            .zip(conditions)
            .map(|([s, l], c)| {
                let speaker = unflatten(
                    &self.normalizer.denormalize(&s)?,
                    &self.skeleton,
                    self.fps,
                    RoleLabel::Speaker,
                )?;
                let listener = unflatten(
                    &self.normalizer.denormalize(&l)?,
                    &self.skeleton,
                    self.fps,
                    RoleLabel::Listener,
                )?;
                PairedInteraction::new(speaker, listener, (*c).clone())
            })
            .collect()
    }

    /// `n` pairs for one condition track.
    pub fn generate_n(
        &self,
        condition: &ConditionTrack,
        n: usize,
        config: &SamplerConfig,
        seed: u64,
    ) -> Result<Vec<PairedInteraction>> {
        if n == 0 {
            return Err(Error::invalid("sample count n must be ≥ 1"));
        }
        self.generate(&vec![condition; n], config, seed)
    }
}
