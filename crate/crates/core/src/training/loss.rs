//! ε-space reconstruction loss and the foot-contact velocity loss.

use crate::error::{Error, Result};
use crate::motion::{MotionSequence, Skeleton};
use crate::nn::tape::{Tape, Var};
use crate::schedule::NoiseSchedule;
use crate::tensor::Matrix;

/// Grounded when below this height (meters) ...
pub const CONTACT_HEIGHT: f64 = 0.05;
/// ... and slower than this (meters/frame) towards the next frame.
pub const CONTACT_SPEED: f64 = 0.01;

/// ‖ε − ε̂‖² for one noisy sample, with ε̂ recovered from the x̂₀ prediction.
pub fn loss_simple_value(
    schedule: &NoiseSchedule,
    x0_hat: &Matrix,
    x_t: &Matrix,
    eps: &Matrix,
    t: usize,
) -> Result<f64> {
    let eps_hat = schedule.x0_to_eps(x_t, x0_hat, t)?;
    Ok(eps.sub(&eps_hat)?.sum_squares())
}

/// Batch form of [`loss_simple_value`] on the tape: the sum over rows of
/// `‖ε − (x_t − √ᾱ·x̂₀)/√(1 − ᾱ)‖²` divided by `samples`.
///
/// `alpha_bars` holds ᾱ for every row of `x0_hat`.
pub fn loss_simple(
    tape: &mut Tape,
    x0_hat: Var,
    x_t: &Matrix,
    eps: &Matrix,
    alpha_bars: &[f64],
    samples: usize,
) -> Result<Var> {
    let (rows, cols) = tape.shape(x0_hat);
    if x_t.shape() != (rows, cols) || eps.shape() != (rows, cols) || alpha_bars.len() != rows {
        return Err(Error::shape(
            "loss_simple",
            format!(
                "x̂₀ {:?}, x_t {:?}, ε {:?}, {} ᾱ values",
                (rows, cols),
                x_t.shape(),
                eps.shape(),
                alpha_bars.len()
            ),
        ));
    }
    if let Some(r) = alpha_bars.iter().position(|&a| a >= 1.0) {
        return Err(Error::DegenerateTimestep { t: r });
    }
    // ε − ε̂ = (ε − x_t/√(1−ᾱ)) + (√ᾱ/√(1−ᾱ))·x̂₀
    let mut offset = Matrix::zeros(rows, cols);
    let mut gain = Matrix::zeros(rows, cols);
    for (r, &ab) in alpha_bars.iter().enumerate() {
        let s = (1.0 - ab).sqrt();
        let k = ab.sqrt() / s;
        for c in 0..cols {
            offset.set(r, c, eps.get(r, c) - x_t.get(r, c) / s);
            gain.set(r, c, k);
        }
    }
    let offset = tape.leaf(offset);
    let gain = tape.leaf(gain);
    let scaled = tape.mul(gain, x0_hat)?;
    let diff = tape.add(offset, scaled)?;
    let total = tape.sum_squares(diff);
    Ok(tape.scale(total, 1.0 / samples as f64))
}

/// Unweighted clean-space alternative: `Σ‖x̂₀ − x₀‖² / samples`.
pub fn loss_x0(tape: &mut Tape, x0_hat: Var, x0: &Matrix, samples: usize) -> Result<Var> {
    if tape.shape(x0_hat) != x0.shape() {
        return Err(Error::shape(
            "loss_x0",
            format!("x̂₀ {:?}, x₀ {:?}", tape.shape(x0_hat), x0.shape()),
        ));
    }
    let target = tape.leaf(x0.scale(-1.0));
    let diff = tape.add(x0_hat, target)?;
    let total = tape.sum_squares(diff);
    Ok(tape.scale(total, 1.0 / samples as f64))
}

/// Per frame and foot joint: grounded according to the height and speed
/// thresholds. The last frame has no successor and is never grounded.
pub fn contact_mask(m: &MotionSequence) -> Vec<Vec<bool>> {
    let pos = m.joint_positions();
    let feet = m.skeleton().foot_joints();
    let n = m.frame_count();
    (0..n)
        .map(|f| {
            feet.iter()
                .map(|&j| {
                    if f + 1 >= n {
                        return false;
                    }
                    let (a, b) = (pos[f][j], pos[f + 1][j]);
                    let speed =
                        ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2) + (b[2] - a[2]).powi(2))
                            .sqrt();
                    a[1] < CONTACT_HEIGHT && speed < CONTACT_SPEED
                })
                .collect()
        })
        .collect()
}

/// Per-row weights for [`loss_foot`] over `sequences` stacked blocks of
/// `frames` rows. Entry `(r, k)` weights the velocity from row `r` to row
/// `r + 1` of foot `k`; rows ending a block get zero.
pub fn foot_weights(masks: &[Vec<Vec<bool>>], frames: usize, feet: usize) -> Result<Matrix> {
    if frames < 2 || feet == 0 {
        return Ok(Matrix::zeros(
            (masks.len() * frames).saturating_sub(1),
            feet.max(1),
        ));
    }
    let norm = ((frames - 1) * feet * masks.len()) as f64;
    let rows = masks.len() * frames - 1;
    let mut w = Matrix::zeros(rows, feet);
    for (s, mask) in masks.iter().enumerate() {
        if mask.len() != frames || mask.iter().any(|m| m.len() != feet) {
            return Err(Error::shape(
                "foot_weights",
                format!("contact mask {s} does not cover {frames} frames × {feet} feet"),
            ));
        }
        for f in 0..frames - 1 {
            for k in 0..feet {
                if mask[f][k] {
                    w.set(s * frames + f, k, 1.0 / norm);
                }
            }
        }
    }
    Ok(w)
}

struct TapeQuat {
    w: Var,
    x: Var,
    y: Var,
    z: Var,
}

/// Mean squared foot velocity over grounded frames.
///
/// `x0` holds stacked blocks of `frames` rows of raw motion features;
/// `weights` comes from [`foot_weights`]. Quaternions are used as predicted
/// (not renormalized) so the loss is polynomial in the features.
pub fn loss_foot(
    tape: &mut Tape,
    x0: Var,
    skeleton: &Skeleton,
    weights: &Matrix,
) -> Result<Var> {
    let (rows, cols) = tape.shape(x0);
    if cols != skeleton.feature_dim() {
        return Err(Error::shape(
            "loss_foot",
            format!("{cols} feature columns for a {}-joint skeleton", skeleton.joint_count()),
        ));
    }
    let feet = skeleton.foot_joints();
    if rows < 2 || feet.is_empty() {
        let z = tape.leaf(Matrix::zeros(1, 1));
        return Ok(z);
    }
    if weights.shape() != (rows - 1, feet.len()) {
        return Err(Error::shape(
            "loss_foot",
            format!("weights {:?} for {rows} rows and {} feet", weights.shape(), feet.len()),
        ));
    }
    let mut terms = Vec::with_capacity(feet.len());
    for (k, &foot) in feet.iter().enumerate() {
        let p = foot_position(tape, x0, skeleton, foot)?;
        let mut sq = None;
        for coord in p {
            let next = tape.slice_rows(coord, 1, rows - 1)?;
            let prev = tape.slice_rows(coord, 0, rows - 1)?;
            let v = tape.sub(next, prev)?;
            let v2 = tape.mul(v, v)?;
            sq = Some(match sq {
                None => v2,
                Some(acc) => tape.add(acc, v2)?,
            });
        }
        let wk = tape.leaf(weights.slice_cols(k, 1)?);
        let weighted = tape.mul(sq.expect("three coordinates"), wk)?;
        terms.push(tape.sum(weighted));
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    Ok(total)
}

/// [`loss_foot`] for a single `frames × D` motion and its contact mask.
pub fn loss_foot_value(x0: &Matrix, mask: &[Vec<bool>], skeleton: &Skeleton) -> Result<f64> {
    let weights = foot_weights(&[mask.to_vec()], x0.rows(), skeleton.foot_joints().len())?;
    let mut tape = Tape::new();
    let x = tape.leaf(x0.clone());
    let l = loss_foot(&mut tape, x, skeleton, &weights)?;
    Ok(tape.scalar(l))
}

fn quat_at(tape: &mut Tape, x0: Var, joint: usize) -> Result<TapeQuat> {
    let base = 3 + 4 * joint;
    Ok(TapeQuat {
        w: tape.slice_cols(x0, base, 1)?,
        x: tape.slice_cols(x0, base + 1, 1)?,
        y: tape.slice_cols(x0, base + 2, 1)?,
        z: tape.slice_cols(x0, base + 3, 1)?,
    })
}

/// Σ kᵢ·aᵢ·bᵢ over the listed products.
fn sum_products(tape: &mut Tape, terms: &[(f64, Var, Var)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(k, a, b) in terms {
        let p = tape.mul(a, b)?;
        let p = if k == 1.0 { p } else { tape.scale(p, k) };
        acc = Some(match acc {
            None => p,
            Some(s) => tape.add(s, p)?,
        });
    }
    acc.ok_or_else(|| Error::invalid("empty product sum"))
}

fn quat_mul(tape: &mut Tape, a: &TapeQuat, b: &TapeQuat) -> Result<TapeQuat> {
    Ok(TapeQuat {
        w: sum_products(
            tape,
            &[(1.0, a.w, b.w), (-1.0, a.x, b.x), (-1.0, a.y, b.y), (-1.0, a.z, b.z)],
        )?,
        x: sum_products(
            tape,
            &[(1.0, a.w, b.x), (1.0, a.x, b.w), (1.0, a.y, b.z), (-1.0, a.z, b.y)],
        )?,
        y: sum_products(
            tape,
            &[(1.0, a.w, b.y), (-1.0, a.x, b.z), (1.0, a.y, b.w), (1.0, a.z, b.x)],
        )?,
        z: sum_products(
            tape,
            &[(1.0, a.w, b.z), (1.0, a.x, b.y), (-1.0, a.y, b.x), (1.0, a.z, b.w)],
        )?,
    })
}

/// R(q)·v for a constant offset, using the unit-quaternion rotation matrix
/// written as a quadratic form in (w, x, y, z).
fn rotate_const(tape: &mut Tape, q: &TapeQuat, v: [f64; 3]) -> Result<[Var; 3]> {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    let [a, b, c] = v;
    // rows of R: [1−2(y²+z²), 2(xy−wz), 2(xz+wy)], ...
    let rx = sum_products(
        tape,
        &[
            (-2.0 * a, y, y),
            (-2.0 * a, z, z),
            (2.0 * b, x, y),
            (-2.0 * b, w, z),
            (2.0 * c, x, z),
            (2.0 * c, w, y),
        ],
    )?;
    let ry = sum_products(
        tape,
        &[
            (2.0 * a, x, y),
            (2.0 * a, w, z),
            (-2.0 * b, x, x),
            (-2.0 * b, z, z),
            (2.0 * c, y, z),
            (-2.0 * c, w, x),
        ],
    )?;
    let rz = sum_products(
        tape,
        &[
            (2.0 * a, x, z),
            (-2.0 * a, w, y),
            (2.0 * b, y, z),
            (2.0 * b, w, x),
            (-2.0 * c, x, x),
            (-2.0 * c, y, y),
        ],
    )?;
    let rows = tape.shape(w).0;
    let mut out = [rx, ry, rz];
    for (o, k) in out.iter_mut().zip(v) {
        let shift = tape.leaf(Matrix::filled(rows, 1, k));
        *o = tape.add(*o, shift)?;
    }
    Ok(out)
}

/// Global position columns of `joint` by forward kinematics along its chain.
fn foot_position(tape: &mut Tape, x0: Var, sk: &Skeleton, joint: usize) -> Result<[Var; 3]> {
    let chain = sk.chain(joint);
    let root = chain[0];
    let mut pos = [
        tape.slice_cols(x0, 0, 1)?,
        tape.slice_cols(x0, 1, 1)?,
        tape.slice_cols(x0, 2, 1)?,
    ];
    let mut global = quat_at(tape, x0, root)?;
    for (i, &j) in chain.iter().enumerate().skip(1) {
        let off = rotate_const(tape, &global, sk.offsets()[j])?;
        for (p, o) in pos.iter_mut().zip(off) {
            *p = tape.add(*p, o)?;
        }
        if i + 1 < chain.len() {
            let local = quat_at(tape, x0, j)?;
            global = quat_mul(tape, &global, &local)?;
        }
    }
    Ok(pos)
}
