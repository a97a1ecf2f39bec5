//! Finite-difference checks of every block, every loss and the full
//! denoiser at toy sizes (at most 8 frames). Shared by the core test suite
//! and the acceptance run.

use std::sync::Arc;

use interdiff_core::denoiser::{forward, BatchInput, DenoiseItem, DenoiserConfig, RoleInput};
use interdiff_core::motion::{RoleLabel, Skeleton};
use interdiff_core::nn::blocks::{
    attention_specs, block_specs, ffn, ffn_specs, layer_norm, layer_norm_specs, linear,
    linear_specs, multi_head_attention, transformer_block,
};
use interdiff_core::nn::gradcheck::{check_gradients, GradCheckReport};
use interdiff_core::nn::{init_params, local_mask, ParamSpec, ParamVars, Tape, Var};
use interdiff_core::training::loss::foot_weights;
use interdiff_core::training::{loss_foot, loss_simple, loss_x0};
use interdiff_core::{Matrix, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Central-difference step. Attention key biases have an exactly zero
/// gradient, so rounding noise (about ε·|f|/h) must stay below the relative
/// error floor; smaller steps violate that.
pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

fn randn(rows: usize, cols: usize, seed: u64) -> Matrix {
    Matrix::randn(rows, cols, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Σ out ⊙ R for a fixed random R, so every output element matters.
fn project(tape: &mut Tape, out: Var) -> Result<Var> {
    let (r, c) = tape.shape(out);
    let weights = tape.leaf(randn(r, c, 999));
    let prod = tape.mul(out, weights)?;
    Ok(tape.sum(prod))
}

/// Checks the gradient with respect to every parameter of `specs` and every
/// matrix of `extra`, which `body` receives as tape variables.
fn with_params<F>(specs: &[ParamSpec], extra: Vec<Matrix>, body: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamVars, &[Var]) -> Result<Var>,
{
    let params = init_params(specs, 7)?;
    let names: Vec<String> = params.names().map(String::from).collect();
    let mut inputs: Vec<Matrix> = params.iter().map(|(_, m)| perturbed(m, names.len() as u64)).collect();
    let n = inputs.len();
    inputs.extend(extra);
    check_gradients(
        |tape, vars| {
            let pv = ParamVars::from_pairs(names.iter().cloned().zip(vars[..n].iter().copied()));
            let out = body(tape, &pv, &vars[n..])?;
            project(tape, out)
        },
        &inputs,
        STEP,
    )
}

/// Initial values moved off exact zeros and ones so no gradient is checked
/// only at a symmetric point.
fn perturbed(m: &Matrix, seed: u64) -> Matrix {
    let noise = randn(m.rows(), m.cols(), seed + m.len() as u64);
    m.zip_map(&noise, |a, b| a + 0.1 * b).expect("same shape")
}

fn toy_config(cross_attention: bool) -> DenoiserConfig {
    DenoiserConfig {
        motion_dim: 5,
        cond_dim: 3,
        role_dim: 2,
        width: 8,
        heads: 2,
        cla_window: 2,
        cla_layers: 1,
        fusion_layers: 1,
        ffn_hidden: 8,
        timesteps: 10,
        cross_attention,
        ..DenoiserConfig::default()
    }
}

fn denoiser_case(cross_attention: bool) -> Result<GradCheckReport> {
    let cfg = toy_config(cross_attention);
    let frames = 4;
    let items: Vec<DenoiseItem> = (0..2)
        .map(|b| DenoiseItem {
            slots: [RoleLabel::Speaker, RoleLabel::Listener].map(|role| RoleInput {
                x_t: randn(frames, cfg.motion_dim, 10 + b),
                cond: randn(frames, cfg.cond_dim, 20 + b),
                role,
            }),
            t: 3 + 4 * b as usize,
        })
        .collect();
    let batch = BatchInput::new(&items, &cfg)?;
    with_params(&cfg.param_specs(), vec![], |tape, pv, _| {
        Ok(forward(tape, pv, &cfg, &batch)?.x0)
    })
}

/// Name and report of every case.
pub fn run_suite() -> Result<Vec<(String, GradCheckReport)>> {
    let mut out = Vec::new();
    let (n, w, h) = (6, 8, 6);
    let x = randn(n, w, 1);

    out.push(("linear".into(), with_params(&linear_specs("l", w, 5), vec![x.clone()], |t, p, v| {
        linear(t, p, "l", v[0])
    })?));
    out.push(("layer_norm".into(), with_params(&layer_norm_specs("n", w), vec![x.clone()], |t, p, v| {
        layer_norm(t, p, "n", v[0])
    })?));
    out.push(("ffn".into(), with_params(&ffn_specs("f", w, h), vec![x.clone()], |t, p, v| {
        ffn(t, p, "f", v[0])
    })?));
    let mask = Arc::new(local_mask(n, 2)?);
    out.push((
        "local_attention".into(),
        with_params(&attention_specs("a", w), vec![x.clone()], |t, p, v| {
            multi_head_attention(t, p, "a", v[0], v[0], 2, 1, Some(&mask))
        })?,
    ));
    let kv = randn(n, w, 2);
    out.push((
        "cross_attention".into(),
        with_params(&attention_specs("a", w), vec![x.clone(), kv], |t, p, v| {
            multi_head_attention(t, p, "a", v[0], v[1], 2, 2, None)
        })?,
    ));
    out.push((
        "transformer_block".into(),
        with_params(&block_specs("b", w, h), vec![x.clone()], |t, p, v| {
            transformer_block(t, p, "b", v[0], 2, 2, Some(&Arc::new(local_mask(n / 2, 1)?)))
        })?,
    ));
    out.push(("denoiser".into(), denoiser_case(true)?));
    out.push(("denoiser_without_cross_attention".into(), denoiser_case(false)?));

    let alpha_bars: Vec<f64> = (0..n).map(|r| 0.2 + 0.1 * r as f64).collect();
    let (xt, eps) = (randn(n, 5, 3), randn(n, 5, 4));
    out.push((
        "loss_simple".into(),
        check_gradients(
            |t, v| loss_simple(t, v[0], &xt, &eps, &alpha_bars, 2),
            &[randn(n, 5, 5)],
            STEP,
        )?,
    ));
    let x0 = randn(n, 5, 6);
    out.push((
        "loss_x0".into(),
        check_gradients(|t, v| loss_x0(t, v[0], &x0, 2), &[randn(n, 5, 7)], STEP)?,
    ));

    let sk = Skeleton::desk();
    let frames = 4;
    let mask = vec![vec![true; sk.foot_joints().len()]; frames];
    let weights = foot_weights(&[mask.clone(), mask], frames, sk.foot_joints().len())?;
    let motion = {
        let mut m = randn(2 * frames, sk.feature_dim(), 8).scale(0.3);
        // quaternion real parts near 1 keep rotations plausible
        for r in 0..m.rows() {
            for j in 0..sk.joint_count() {
                m.set(r, 3 + 4 * j, 1.0 + m.get(r, 3 + 4 * j));
            }
        }
        m
    };
    out.push((
        "loss_foot".into(),
        check_gradients(|t, v| loss_foot(t, v[0], &sk, &weights), &[motion], STEP)?,
    ));
    Ok(out)
}
