//! Sublayers built on the tape, plus the parameter layouts they expect.
//!
//! Parameters are looked up by prefix: a linear map `p` uses `p.w`
//! (in × out) and `p.b` (1 × out), a layer norm `p` uses `p.g` and `p.b`.

use std::sync::Arc;

use crate::error::Result;
use crate::nn::mask::AttentionMask;
use crate::nn::params::{ParamInit, ParamSet, ParamSpec, ParamVars};
use crate::nn::tape::{Tape, Var};
use crate::tensor::Matrix;

pub fn linear_specs(prefix: &str, fan_in: usize, fan_out: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::new(format!("{prefix}.w"), fan_in, fan_out, ParamInit::Weight),
        ParamSpec::new(format!("{prefix}.b"), 1, fan_out, ParamInit::Zeros),
    ]
}

pub fn layer_norm_specs(prefix: &str, width: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::new(format!("{prefix}.g"), 1, width, ParamInit::Ones),
        ParamSpec::new(format!("{prefix}.b"), 1, width, ParamInit::Zeros),
    ]
}

pub fn ffn_specs(prefix: &str, width: usize, hidden: usize) -> Vec<ParamSpec> {
    let mut v = linear_specs(&format!("{prefix}.gate"), width, hidden);
    v.extend(linear_specs(&format!("{prefix}.up"), width, hidden));
    v.extend(linear_specs(&format!("{prefix}.down"), hidden, width));
    v
}

pub fn attention_specs(prefix: &str, width: usize) -> Vec<ParamSpec> {
    ["q", "k", "v", "o"]
        .iter()
        .flat_map(|p| linear_specs(&format!("{prefix}.{p}"), width, width))
        .collect()
}

/// Pre-norm transformer block: attention sublayer then gated feed-forward.
pub fn block_specs(prefix: &str, width: usize, hidden: usize) -> Vec<ParamSpec> {
    let mut v = layer_norm_specs(&format!("{prefix}.ln1"), width);
    v.extend(attention_specs(&format!("{prefix}.attn"), width));
    v.extend(layer_norm_specs(&format!("{prefix}.ln2"), width));
    v.extend(ffn_specs(&format!("{prefix}.ffn"), width, hidden));
    v
}

pub fn linear(tape: &mut Tape, p: &ParamVars, prefix: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{prefix}.w"))?;
    let b = p.get(&format!("{prefix}.b"))?;
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

pub fn layer_norm(tape: &mut Tape, p: &ParamVars, prefix: &str, x: Var) -> Result<Var> {
    let g = p.get(&format!("{prefix}.g"))?;
    let b = p.get(&format!("{prefix}.b"))?;
    tape.layer_norm(x, g, b)
}

/// down(silu(gate(x)) ⊙ up(x))
pub fn ffn(tape: &mut Tape, p: &ParamVars, prefix: &str, x: Var) -> Result<Var> {
    let gate = linear(tape, p, &format!("{prefix}.gate"), x)?;
    let gate = tape.silu(gate);
    let up = linear(tape, p, &format!("{prefix}.up"), x)?;
    let h = tape.mul(gate, up)?;
    linear(tape, p, &format!("{prefix}.down"), h)
}

/// Multi-head attention from `queries` onto `keys_values`, followed by the
/// output projection. Rows form `segments` independent sequences of equal
/// length; see [`Tape::segmented_attention`].
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention(
    tape: &mut Tape,
    p: &ParamVars,
    prefix: &str,
    queries: Var,
    keys_values: Var,
    heads: usize,
    segments: usize,
    mask: Option<&Arc<AttentionMask>>,
) -> Result<Var> {
    let q = linear(tape, p, &format!("{prefix}.q"), queries)?;
    let k = linear(tape, p, &format!("{prefix}.k"), keys_values)?;
    let v = linear(tape, p, &format!("{prefix}.v"), keys_values)?;
    let joined = tape.segmented_attention(q, k, v, heads, segments, mask)?;
    linear(tape, p, &format!("{prefix}.o"), joined)
}

/// x + MHA(LN(x)) then + FFN(LN(·)), self-attention within each segment
/// under `mask`.
pub fn transformer_block(
    tape: &mut Tape,
    p: &ParamVars,
    prefix: &str,
    x: Var,
    heads: usize,
    segments: usize,
    mask: Option<&Arc<AttentionMask>>,
) -> Result<Var> {
    let h = layer_norm(tape, p, &format!("{prefix}.ln1"), x)?;
    let a = multi_head_attention(tape, p, &format!("{prefix}.attn"), h, h, heads, segments, mask)?;
    let x = tape.add(x, a)?;
    let h = layer_norm(tape, p, &format!("{prefix}.ln2"), x)?;
    let f = ffn(tape, p, &format!("{prefix}.ffn"), h)?;
    tape.add(x, f)
}

/// Sinusoidal features of `positions`, `width` columns
/// (sin in even columns, cos in odd ones).
pub fn sinusoidal(positions: &[f64], width: usize) -> Matrix {
    Matrix::from_fn(positions.len(), width, |r, c| {
        let freq = 1.0 / 10_000f64.powf((c / 2 * 2) as f64 / width as f64);
        let a = positions[r] * freq;
        if c % 2 == 0 {
            a.sin()
        } else {
            a.cos()
        }
    })
}

/// Tape-free forward of `x·W + b`.
pub fn linear_forward(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let (x, w, b) = (tape.leaf(x.clone()), tape.leaf(w.clone()), tape.leaf(b.clone()));
    let y = tape.matmul(x, w)?;
    let y = tape.add_row(y, b)?;
    Ok(tape.value(y).clone())
}

pub fn layer_norm_forward(x: &Matrix, gain: &Matrix, bias: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let (x, g, b) = (tape.leaf(x.clone()), tape.leaf(gain.clone()), tape.leaf(bias.clone()));
    let y = tape.layer_norm(x, g, b)?;
    Ok(tape.value(y).clone())
}

/// Feed-forward with parameters `{prefix}.gate/up/down` taken from `params`.
pub fn ffn_forward(x: &Matrix, params: &ParamSet, prefix: &str) -> Result<Matrix> {
    let mut tape = Tape::new();
    let vars = params.attach(&mut tape);
    let x = tape.leaf(x.clone());
    let y = ffn(&mut tape, &vars, prefix, x)?;
    Ok(tape.value(y).clone())
}

/// Single-head scaled dot-product attention.
pub fn attention_forward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    mask: Option<&Arc<AttentionMask>>,
) -> Result<Matrix> {
    let mut tape = Tape::new();
    let (q, k, v) = (tape.leaf(q.clone()), tape.leaf(k.clone()), tape.leaf(v.clone()));
    let y = tape.attention(q, k, v, mask)?;
    Ok(tape.value(y).clone())
}
