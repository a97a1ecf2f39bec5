//! Two-role x̂₀ denoiser.
//!
//! Both roles run through the same weights. Per role, the noisy motion is
//! extended by a learned role vector, projected together with that role's
//! share of the condition, offset by timestep and time-axis position
//! encodings, and passed through locally masked transformer blocks. The two
//! role streams of a sample are then stacked into one `2F`-row sequence for
//! global fusion blocks, split again, and each role's stream (with its
//! condition re-attached) cross-attends to the other role's stream before a
//! shared output head maps back to motion features.
//!
//! Inside a batch, rows are laid out sample-major: sample `b` occupies rows
//! `2bF..2(b+1)F`, first its slot-0 block and then its slot-1 block. Local
//! attention therefore runs over `2B` segments of `F` rows and fusion over
//! `B` segments of `2F` rows, with no reshuffling.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::RoleLabel;
use crate::nn::blocks::{
    attention_specs, block_specs, ffn, ffn_specs, layer_norm, layer_norm_specs, linear,
    linear_specs, multi_head_attention, sinusoidal, transformer_block,
};
use crate::nn::mask::local_mask;
use crate::nn::params::{init_params, ParamInit, ParamSet, ParamSpec, ParamVars};
use crate::nn::tape::{Tape, Var};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    /// Motion feature dimension D.
    pub motion_dim: usize,
    /// Condition feature dimension A.
    pub cond_dim: usize,
    /// Role encoding width r.
    pub role_dim: usize,
    pub width: usize,
    pub heads: usize,
    pub cla_window: usize,
    pub cla_layers: usize,
    pub fusion_layers: usize,
    pub ffn_hidden: usize,
    /// Speaker share λ of the condition; the listener gets 1 − λ.
    pub lambda: f64,
    /// When false the cross-attention sublayer is dropped entirely.
    pub cross_attention: bool,
    pub timesteps: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            motion_dim: 23,
            cond_dim: 4,
            role_dim: 16,
            width: 64,
            heads: 4,
            cla_window: 8,
            cla_layers: 2,
            fusion_layers: 2,
            ffn_hidden: 128,
            lambda: 0.8,
            cross_attention: true,
            timesteps: 1000,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("motion_dim", self.motion_dim),
            ("cond_dim", self.cond_dim),
            ("role_dim", self.role_dim),
            ("width", self.width),
            ("heads", self.heads),
            ("cla_window", self.cla_window),
            ("ffn_hidden", self.ffn_hidden),
            ("timesteps", self.timesteps),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::invalid(format!("model.{name} must be ≥ 1")));
            }
        }
        if self.width % self.heads != 0 {
            return Err(Error::invalid(format!(
                "model.width {} is not divisible by model.heads {}",
                self.width, self.heads
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!(
                "model.lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let (d, a, r, w, h) = (
            self.motion_dim,
            self.cond_dim,
            self.role_dim,
            self.width,
            self.ffn_hidden,
        );
        let mut v = vec![ParamSpec::new("role.embedding", 2, r, ParamInit::Normal { std: 1.0 })];
        v.extend(linear_specs("branch.in", d + r, w));
        v.push(ParamSpec::new("branch.cond.w", a, w, ParamInit::Weight));
        v.extend(linear_specs("time.l1", w, w));
        v.extend(linear_specs("time.l2", w, w));
        for i in 0..self.cla_layers {
            v.extend(block_specs(&format!("cla.{i}"), w, h));
        }
        for i in 0..self.fusion_layers {
            v.extend(block_specs(&format!("fusion.{i}"), w, h));
        }
        v.extend(linear_specs("cross.in", w, w));
        v.push(ParamSpec::new("cross.cond.w", a, w, ParamInit::Weight));
        if self.cross_attention {
            v.extend(layer_norm_specs("cross.ln_q", w));
            v.extend(layer_norm_specs("cross.ln_kv", w));
            v.extend(attention_specs("cross.attn", w));
        }
        v.extend(layer_norm_specs("cross.ln_ffn", w));
        v.extend(ffn_specs("cross.ffn", w, h));
        v.extend(layer_norm_specs("head.ln", w));
        v.extend(linear_specs("head", w, d));
        v
    }
}

/// `(λ·C, (1 − λ)·C)`, with the two shares summing to `C` exactly.
///
/// The larger share is a product and the smaller one the difference; the
/// larger share lies in `[C/2, C]`, so the subtraction and the sum are exact.
pub fn split_condition(c: &Matrix, lambda: f64) -> Result<(Matrix, Matrix)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!(
            "condition weight λ must lie in [0, 1], got {lambda}"
        )));
    }
    let big = c.scale(lambda.max(1.0 - lambda));
    let small = c.sub(&big)?;
    Ok(if lambda >= 0.5 { (big, small) } else { (small, big) })
}

/// Appends the role's encoding row to every frame of `x`.
pub fn encode_role(x: &Matrix, role: RoleLabel, embedding: &Matrix) -> Result<Matrix> {
    if embedding.rows() != 2 {
        return Err(Error::shape(
            "encode_role",
            format!("role embedding must have 2 rows, got {}", embedding.rows()),
        ));
    }
    let row = embedding.slice_rows(role.index(), 1)?;
    let tiled = Matrix::from_fn(x.rows(), row.cols(), |_, c| row.get(0, c));
    Matrix::concat_cols(&[x, &tiled])
}

/// One role's slot in a sample: noisy motion, its condition share and role.
#[derive(Clone, Debug)]
pub struct RoleInput {
    pub x_t: Matrix,
    pub cond: Matrix,
    pub role: RoleLabel,
}

/// One sample: two role slots and a timestep.
#[derive(Clone, Debug)]
pub struct DenoiseItem {
    pub slots: [RoleInput; 2],
    pub t: usize,
}

/// A batch flattened into the sample-major row layout.
#[derive(Clone, Debug)]
pub struct BatchInput {
    frames: usize,
    x_t: Matrix,
    cond: Matrix,
    roles: Vec<RoleLabel>,
    timesteps: Vec<usize>,
}

impl BatchInput {
    pub fn new(items: &[DenoiseItem], cfg: &DenoiserConfig) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("empty denoiser batch"))?;
        let frames = first.slots[0].x_t.rows();
        if frames == 0 {
            return Err(Error::invalid("denoiser input has zero frames"));
        }
        let mut xs = Vec::with_capacity(2 * items.len());
        let mut cs = Vec::with_capacity(2 * items.len());
        let mut roles = Vec::with_capacity(2 * items.len());
        let mut timesteps = Vec::with_capacity(items.len());
        for item in items {
            if item.t >= cfg.timesteps {
                return Err(Error::invalid(format!(
                    "timestep {} outside [0, {})",
                    item.t, cfg.timesteps
                )));
            }
            for slot in &item.slots {
                if slot.x_t.shape() != (frames, cfg.motion_dim) {
                    return Err(Error::shape(
                        "denoise",
                        format!(
                            "motion is {:?}, expected ({frames}, {})",
                            slot.x_t.shape(),
                            cfg.motion_dim
                        ),
                    ));
                }
                if slot.cond.shape() != (frames, cfg.cond_dim) {
                    return Err(Error::invalid(format!(
                        "condition is {:?}, expected ({frames}, {}) to match the motion",
                        slot.cond.shape(),
                        cfg.cond_dim
                    )));
                }
                xs.push(&slot.x_t);
                cs.push(&slot.cond);
                roles.push(slot.role);
            }
            timesteps.push(item.t);
        }
        Ok(Self {
            frames,
            x_t: Matrix::concat_rows(&xs)?,
            cond: Matrix::concat_rows(&cs)?,
            roles,
            timesteps,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn samples(&self) -> usize {
        self.timesteps.len()
    }

    pub fn x_t(&self) -> &Matrix {
        &self.x_t
    }

    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    /// Block `slot` of sample `sample` cut out of a layout-shaped matrix.
    pub fn block(&self, m: &Matrix, sample: usize, slot: usize) -> Result<Matrix> {
        m.slice_rows((2 * sample + slot) * self.frames, self.frames)
    }
}

/// Tape handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// Pre-fusion branch latents, sample-major layout, width columns.
    pub branch: Var,
    /// x̂₀ for every row of the batch.
    pub x0: Var,
}

/// Records the denoiser forward pass for `batch` on `tape`.
pub fn forward(
    tape: &mut Tape,
    p: &ParamVars,
    cfg: &DenoiserConfig,
    batch: &BatchInput,
) -> Result<ForwardVars> {
    let f = batch.frames;
    let blocks = batch.roles.len();
    let rows = blocks * f;
    let w = cfg.width;

    // role encoding, selected per row by a one-hot constant
    let selector = Matrix::from_fn(rows, 2, |r, c| {
        f64::from(u8::from(batch.roles[r / f].index() == c))
    });
    let selector = tape.leaf(selector);
    let role_rows = tape.matmul(selector, p.get("role.embedding")?)?;
    let x = tape.leaf(batch.x_t.clone());
    let x_aug = tape.concat_cols(&[x, role_rows])?;

    let cond = tape.leaf(batch.cond.clone());
    let h = linear(tape, p, "branch.in", x_aug)?;
    let hc = tape.matmul(cond, p.get("branch.cond.w")?)?;
    let h = tape.add(h, hc)?;

    let t_features: Vec<f64> = (0..rows)
        .map(|r| batch.timesteps[r / (2 * f)] as f64)
        .collect();
    let temb = tape.leaf(sinusoidal(&t_features, w));
    let temb = linear(tape, p, "time.l1", temb)?;
    let temb = tape.silu(temb);
    let temb = linear(tape, p, "time.l2", temb)?;
    let h = tape.add(h, temb)?;

    let positions: Vec<f64> = (0..rows).map(|r| (r % f) as f64).collect();
    let pos = tape.leaf(sinusoidal(&positions, w));
    let mut z = tape.add(h, pos)?;

    let mask = Arc::new(local_mask(f, cfg.cla_window)?);
    for i in 0..cfg.cla_layers {
        z = transformer_block(tape, p, &format!("cla.{i}"), z, cfg.heads, blocks, Some(&mask))?;
    }
    let branch = z;

    for i in 0..cfg.fusion_layers {
        z = transformer_block(tape, p, &format!("fusion.{i}"), z, cfg.heads, blocks / 2, None)?;
    }

    let a = linear(tape, p, "cross.in", z)?;
    let ac = tape.matmul(cond, p.get("cross.cond.w")?)?;
    let mut y = tape.add(a, ac)?;
    if cfg.cross_attention {
        let q = layer_norm(tape, p, "cross.ln_q", y)?;
        let kv = layer_norm(tape, p, "cross.ln_kv", y)?;
        let other = swap_slots(tape, kv, f, blocks)?;
        let ca = multi_head_attention(tape, p, "cross.attn", q, other, cfg.heads, blocks, None)?;
        y = tape.add(y, ca)?;
    }
    let hf = layer_norm(tape, p, "cross.ln_ffn", y)?;
    let hf = ffn(tape, p, "cross.ffn", hf)?;
    let y = tape.add(y, hf)?;
    let y = layer_norm(tape, p, "head.ln", y)?;
    let x0 = linear(tape, p, "head", y)?;
    Ok(ForwardVars { branch, x0 })
}

/// Exchanges the two slot blocks of every sample.
fn swap_slots(tape: &mut Tape, x: Var, frames: usize, blocks: usize) -> Result<Var> {
    let parts = (0..blocks)
        .map(|b| tape.slice_rows(x, (b ^ 1) * frames, frames))
        .collect::<Result<Vec<_>>>()?;
    tape.concat_rows(&parts)
}

/// Denoiser configuration together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser {
    config: DenoiserConfig,
    params: ParamSet,
}

impl Denoiser {
    pub fn init(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config.param_specs(), seed)?;
        Ok(Self { config, params })
    }

    /// Wraps existing parameters; names and shapes must match the config.
    pub fn from_params(config: DenoiserConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let specs = config.param_specs();
        if specs.len() != params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                params.len()
            )));
        }
        for spec in &specs {
            let m = params.get(&spec.name)?;
            if m.shape() != (spec.rows, spec.cols) {
                return Err(Error::shape(
                    "Denoiser::from_params",
                    format!(
                        "`{}` is {:?}, expected ({}, {})",
                        spec.name,
                        m.shape(),
                        spec.rows,
                        spec.cols
                    ),
                ));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }

    /// Runs the batch and returns (x̂₀, pre-fusion latents) in the batch layout.
    pub fn run(&self, batch: &BatchInput) -> Result<(Matrix, Matrix)> {
        let mut tape = Tape::new();
        let pv = self.params.attach(&mut tape);
        let out = forward(&mut tape, &pv, &self.config, batch)?;
        Ok((tape.value(out.x0).clone(), tape.value(out.branch).clone()))
    }

    /// x̂₀ for each item, as `[slot 0, slot 1]` pairs.
    pub fn denoise_batch(&self, items: &[DenoiseItem]) -> Result<Vec<[Matrix; 2]>> {
        let batch = BatchInput::new(items, &self.config)?;
        let (x0, _) = self.run(&batch)?;
        (0..items.len())
            .map(|b| Ok([batch.block(&x0, b, 0)?, batch.block(&x0, b, 1)?]))
            .collect()
    }

    /// Both roles' x̂₀ from explicit per-slot conditions and roles.
    #[allow(clippy::too_many_arguments)]
    pub fn denoise_split(
        &self,
        x_a: &Matrix,
        x_b: &Matrix,
        cond_a: &Matrix,
        cond_b: &Matrix,
        roles: [RoleLabel; 2],
        t: usize,
    ) -> Result<(Matrix, Matrix)> {
        let item = DenoiseItem {
            slots: [
                RoleInput {
                    x_t: x_a.clone(),
                    cond: cond_a.clone(),
                    role: roles[0],
                },
                RoleInput {
                    x_t: x_b.clone(),
                    cond: cond_b.clone(),
                    role: roles[1],
                },
            ],
            t,
        };
        let [a, b] = self.denoise_batch(std::slice::from_ref(&item))?.remove(0);
        Ok((a, b))
    }

    /// (x̂₀ˢ, x̂₀ˡ) with the condition split by λ.
    pub fn denoise(
        &self,
        x_s: &Matrix,
        x_l: &Matrix,
        t: usize,
        cond: &Matrix,
    ) -> Result<(Matrix, Matrix)> {
        let (cs, cl) = split_condition(cond, self.config.lambda)?;
        self.denoise_split(x_s, x_l, &cs, &cl, [RoleLabel::Speaker, RoleLabel::Listener], t)
    }

    /// Pre-fusion latents (z_s, z_l).
    pub fn branch_latents(
        &self,
        x_s: &Matrix,
        x_l: &Matrix,
        t: usize,
        cond: &Matrix,
    ) -> Result<(Matrix, Matrix)> {
        let (cs, cl) = split_condition(cond, self.config.lambda)?;
        let item = DenoiseItem {
            slots: [
                RoleInput {
                    x_t: x_s.clone(),
                    cond: cs,
                    role: RoleLabel::Speaker,
                },
                RoleInput {
                    x_t: x_l.clone(),
                    cond: cl,
                    role: RoleLabel::Listener,
                },
            ],
            t,
        };
        let batch = BatchInput::new(std::slice::from_ref(&item), &self.config)?;
        let (_, z) = self.run(&batch)?;
        Ok((batch.block(&z, 0, 0)?, batch.block(&z, 0, 1)?))
    }
}
