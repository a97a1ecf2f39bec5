//! Minimal neural building blocks with reverse-mode gradients.

pub mod blocks;
pub mod gradcheck;
pub mod mask;
pub mod params;
pub mod tape;

pub use blocks::{
    attention_forward, ffn_forward, layer_norm_forward, linear_forward, sinusoidal,
};
pub use mask::{local_mask, AttentionMask};
pub use params::{init_params, ParamInit, ParamSet, ParamSpec, ParamVars};
pub use tape::{Gradients, Tape, Var};
