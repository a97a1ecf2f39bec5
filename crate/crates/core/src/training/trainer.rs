use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::denoiser::{forward, split_condition, BatchInput, DenoiseItem, Denoiser, DenoiserConfig, RoleInput};
use crate::error::{Error, Result};
use crate::motion::{RoleLabel, Skeleton};
use crate::nn::params::ParamVars;
use crate::nn::tape::{Tape, Var};
use crate::schedule::NoiseSchedule;
use crate::tensor::Matrix;
use crate::training::adam::{adam_step, AdamState};
use crate::training::checkpoint::{Checkpoint, RngState};
use crate::training::data::{FeatureNormalizer, TrainingSet};
use crate::training::loss::{foot_weights, loss_foot, loss_simple, loss_x0};
use crate::training::{LossSpace, TrainConfig};

/// Random stream used by the training loop; parameters use stream 0.
const TRAIN_STREAM: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Number of completed optimizer steps, including this one.
    pub step: u64,
    pub loss: f64,
    pub loss_simple: f64,
    pub loss_foot: f64,
}

/// Draws for one sample of a batch.
struct Draw {
    index: usize,
    t: usize,
    eps: [Matrix; 2],
    null_condition: bool,
}

/// Owns the model, optimizer state and random stream of one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    model: Denoiser,
    config: TrainConfig,
    schedule: NoiseSchedule,
    adam: AdamState,
    rng: ChaCha8Rng,
    step: u64,
    normalizer: FeatureNormalizer,
    skeleton: Skeleton,
    fps: f64,
}

impl Trainer {
    pub fn new(model: DenoiserConfig, config: TrainConfig, data: &TrainingSet) -> Result<Self> {
        config.validate()?;
        if model.motion_dim != data.skeleton().feature_dim() || model.cond_dim != data.cond_dim() {
            return Err(Error::invalid(format!(
                "model expects D = {}, A = {} but the data has D = {}, A = {}",
                model.motion_dim,
                model.cond_dim,
                data.skeleton().feature_dim(),
                data.cond_dim()
            )));
        }
        let schedule = config.schedule(model.timesteps)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(TRAIN_STREAM);
        Ok(Self {
            model: Denoiser::init(model, config.seed)?,
            config,
            schedule,
            adam: AdamState::default(),
            rng,
            step: 0,
            normalizer: data.normalizer().clone(),
            skeleton: data.skeleton().clone(),
            fps: data.fps(),
        })
    }

    pub fn from_checkpoint(c: Checkpoint) -> Result<Self> {
        c.train.validate()?;
        let mut rng = ChaCha8Rng::from_seed(c.rng.seed);
        rng.set_stream(c.rng.stream);
        rng.set_word_pos(c.rng.word_pos);
        Ok(Self {
            model: Denoiser::from_params(c.model, c.params)?,
            config: c.train,
            schedule: c.schedule,
            adam: c.adam,
            rng,
            step: c.step,
            normalizer: c.normalizer,
            skeleton: c.skeleton,
            fps: c.fps,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.config().clone(),
            train: self.config.clone(),
            step: self.step,
            params: self.model.params().clone(),
            adam: self.adam.clone(),
            schedule: self.schedule.clone(),
            normalizer: self.normalizer.clone(),
            skeleton: self.skeleton.clone(),
            fps: self.fps,
            rng: RngState {
                seed: self.rng.get_seed(),
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos(),
            },
        }
    }

    pub fn model(&self) -> &Denoiser {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One optimizer step on a freshly drawn batch. On error nothing but the
    /// random stream has advanced.
    pub fn step(&mut self, data: &TrainingSet) -> Result<StepStats> {
        if data.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let draws = self.draw_batch(data);
        let mut tape = Tape::new();
        let pv = self.model.params().attach(&mut tape);
        let (total, ls, lf) = self.batch_loss(&mut tape, &pv, data, &draws)?;
        let stats = StepStats {
            step: self.step + 1,
            loss: tape.scalar(total),
            loss_simple: tape.scalar(ls),
            loss_foot: lf.map_or(0.0, |v| tape.scalar(v)),
        };
        if !stats.loss.is_finite() {
            return Err(Error::Divergence {
                step: stats.step,
                detail: format!(
                    "loss is {} (simple {}, foot {})",
                    stats.loss, stats.loss_simple, stats.loss_foot
                ),
            });
        }
        let mut grads = tape.backward(total)?;
        let named = pv.collect_grads(&tape, &mut grads);
        adam_step(self.model.params_mut(), &named, &mut self.adam, &self.config.adam())?;
        self.step += 1;
        Ok(stats)
    }

    /// Runs `steps` optimizer steps, calling `observe` after each.
    pub fn run(
        &mut self,
        data: &TrainingSet,
        steps: u64,
        mut observe: impl FnMut(&Trainer, &StepStats) -> Result<()>,
    ) -> Result<()> {
        for _ in 0..steps {
            let stats = self.step(data)?;
            observe(self, &stats)?;
        }
        Ok(())
    }

    /// Mean total loss over `batches` batches drawn from a private stream
    /// seeded with `seed`, without condition dropout. The trainer's own
    /// random stream is untouched.
    pub fn eval_loss(&self, data: &TrainingSet, seed: u64, batches: usize) -> Result<f64> {
        let mut probe = self.clone();
        probe.rng = ChaCha8Rng::seed_from_u64(seed);
        probe.config.cond_dropout = 0.0;
        let mut total = 0.0;
        for _ in 0..batches {
            let draws = probe.draw_batch(data);
            let mut tape = Tape::new();
            let pv = probe.model.params().attach(&mut tape);
            let (loss, _, _) = probe.batch_loss(&mut tape, &pv, data, &draws)?;
            total += tape.scalar(loss);
        }
        Ok(total / batches.max(1) as f64)
    }

    fn draw_batch(&mut self, data: &TrainingSet) -> Vec<Draw> {
        let (f, d) = (data.frames(), data.skeleton().feature_dim());
        let timesteps = self.schedule.timesteps();
        (0..self.config.batch_size)
            .map(|_| {
                let index = self.rng.random_range(0..data.len());
                let t = self.rng.random_range(0..timesteps);
                let eps = [
                    Matrix::randn(f, d, &mut self.rng),
                    Matrix::randn(f, d, &mut self.rng),
                ];
                let null_condition = self.rng.random::<f64>() < self.config.cond_dropout;
                Draw {
                    index,
                    t,
                    eps,
                    null_condition,
                }
            })
            .collect()
    }

    /// Records (total, simple, foot) losses for the drawn batch.
    fn batch_loss(
        &self,
        tape: &mut Tape,
        pv: &ParamVars,
        data: &TrainingSet,
        draws: &[Draw],
    ) -> Result<(Var, Var, Option<Var>)> {
        let cfg = self.model.config();
        let roles = [RoleLabel::Speaker, RoleLabel::Listener];
        let mut items = Vec::with_capacity(draws.len());
        let mut eps_rows = Vec::with_capacity(2 * draws.len());
        let mut x0_rows = Vec::with_capacity(2 * draws.len());
        let mut alpha_bars = Vec::with_capacity(2 * draws.len() * data.frames());
        let mut masks = Vec::with_capacity(2 * draws.len());
        for draw in draws {
            let sample = &data.samples()[draw.index];
            let cond = if draw.null_condition {
                Matrix::zeros(sample.cond.rows(), sample.cond.cols())
            } else {
                sample.cond.clone()
            };
            let (cs, cl) = split_condition(&cond, cfg.lambda)?;
            let mut slots = Vec::with_capacity(2);
            for (role, cond) in roles.into_iter().zip([cs, cl]) {
                let r = role.index();
                slots.push(RoleInput {
                    x_t: self.schedule.q_sample(&sample.x0[r], draw.t, &draw.eps[r])?,
                    cond,
                    role,
                });
                eps_rows.push(&draw.eps[r]);
                x0_rows.push(&sample.x0[r]);
                masks.push(sample.contacts[r].clone());
                alpha_bars.extend(std::iter::repeat_n(
                    self.schedule.alpha_bar(draw.t),
                    data.frames(),
                ));
            }
            let slots: [RoleInput; 2] = slots.try_into().expect("two role slots");
            items.push(DenoiseItem { slots, t: draw.t });
        }
        let batch = BatchInput::new(&items, cfg)?;
        let out = forward(tape, pv, cfg, &batch)?;
        let ls = match self.config.loss_space {
            LossSpace::Epsilon => {
                let eps = Matrix::concat_rows(&eps_rows)?;
                loss_simple(tape, out.x0, batch.x_t(), &eps, &alpha_bars, draws.len())?
            }
            LossSpace::X0 => {
                let x0 = Matrix::concat_rows(&x0_rows)?;
                loss_x0(tape, out.x0, &x0, draws.len())?
            }
        };
        if !self.config.foot_loss {
            return Ok((ls, ls, None));
        }
        let rows = tape.shape(out.x0).0;
        let std = tape.leaf(Matrix::from_fn(rows, cfg.motion_dim, |_, c| {
            self.normalizer.std()[c]
        }));
        let mean = tape.leaf(Matrix::row_vector(self.normalizer.mean()));
        let raw = tape.mul(out.x0, std)?;
        let raw = tape.add_row(raw, mean)?;
        let weights = foot_weights(&masks, data.frames(), self.skeleton.foot_joints().len())?;
        let lf = loss_foot(tape, raw, &self.skeleton, &weights)?;
        let weighted = tape.scale(lf, self.config.alpha_foot);
        let total = tape.add(ls, weighted)?;
        Ok((total, ls, Some(lf)))
    }
}
