//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every intermediate value of a forward pass together
//! with the operation that produced it; [`Tape::backward`] walks the record
//! in reverse and accumulates adjoints. Layer normalization and masked
//! attention are single fused nodes with hand-derived adjoints.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::mask::AttentionMask;
use crate::tensor::{gemm, GemmOperand, Matrix};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `x + b` with `b` a single row broadcast over every row of `x`.
    AddRow(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    /// One probability matrix per (segment, head), segment-major.
    Attention {
        q: Var,
        k: Var,
        v: Var,
        probs: Vec<Matrix>,
        heads: usize,
        segments: usize,
        scale: f64,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    /// Single row repeated `n` times.
    RepeatRow(Var),
    SumSquares(Var),
    Sum(Var),
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).get(0, 0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(row));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + row {:?}", xv.shape(), bv.shape()),
            ));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.row(0)) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(x, row)))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x).scale(k);
        self.push(out, Op::Scale(x, k))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * sigmoid(v));
        self.push(out, Op::Silu(x))
    }

    /// Row-wise layer normalization with learned gain and bias rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let (n, m) = xv.shape();
        for (name, p) in [("gain", gain), ("bias", bias)] {
            if self.shape(p) != (1, m) {
                return Err(Error::shape(
                    "layer_norm",
                    format!("{name} {:?} for width {m}", self.shape(p)),
                ));
            }
        }
        let mut xhat = Matrix::zeros(n, m);
        let mut inv_std = Vec::with_capacity(n);
        for r in 0..n {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let (g, b) = (self.value(gain).row(0), self.value(bias).row(0));
        let mut out = xhat.clone();
        for r in 0..n {
            for ((o, gi), bi) in out.row_mut(r).iter_mut().zip(g).zip(b) {
                *o = *o * gi + bi;
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// softmax(q·kᵀ / √d + mask)·v for one head.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        mask: Option<&Arc<AttentionMask>>,
    ) -> Result<Var> {
        self.segmented_attention(q, k, v, 1, 1, mask)
    }

    /// Multi-head attention over independent row segments.
    ///
    /// `q` holds `segments` blocks of equal height and `k`/`v` hold the same
    /// number of blocks; segment `i` of `q` attends only to segment `i` of
    /// `k`/`v`. Columns are split into `heads` equal groups, each attending
    /// separately with scale `1/√(cols/heads)`. The mask, if any, applies to
    /// every segment and head.
    pub fn segmented_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segments: usize,
        mask: Option<&Arc<AttentionMask>>,
    ) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let bad_shape = qv.cols() != kv.cols()
            || kv.rows() != vv.rows()
            || heads == 0
            || segments == 0
            || qv.cols() % heads != 0
            || vv.cols() % heads != 0
            || qv.rows() % segments != 0
            || kv.rows() % segments != 0;
        if bad_shape {
            return Err(Error::shape(
                "attention",
                format!(
                    "q {:?}, k {:?}, v {:?} with {heads} heads over {segments} segments",
                    qv.shape(),
                    kv.shape(),
                    vv.shape()
                ),
            ));
        }
        let (lq, lk) = (qv.rows() / segments, kv.rows() / segments);
        if let Some(m) = mask {
            if m.shape() != (lq, lk) {
                return Err(Error::shape(
                    "attention",
                    format!("mask {:?} for {lq} queries and {lk} keys", m.shape()),
                ));
            }
        }
        let (dq, dv) = (qv.cols() / heads, vv.cols() / heads);
        let scale = 1.0 / (dq as f64).sqrt();
        let mut out = Matrix::zeros(qv.rows(), vv.cols());
        let mut probs = Vec::with_capacity(segments * heads);
        for s in 0..segments {
            for h in 0..heads {
                let qb = block(qv, s * lq, lq, h * dq, dq);
                let kb = block(kv, s * lk, lk, h * dq, dq);
                let vb = block(vv, s * lk, lk, h * dv, dv);
                let mut p = qb.matmul_t(&kb)?;
                for r in 0..lq {
                    let row = p.row_mut(r);
                    let allowed = |c: usize| mask.is_none_or(|m| m.allows(r, c));
                    let mut max = f64::NEG_INFINITY;
                    for (c, x) in row.iter_mut().enumerate() {
                        *x *= scale;
                        if allowed(c) && *x > max {
                            max = *x;
                        }
                    }
                    if max == f64::NEG_INFINITY {
                        return Err(Error::invalid(format!("attention query {r} has no keys")));
                    }
                    let mut total = 0.0;
                    for (c, x) in row.iter_mut().enumerate() {
                        *x = if allowed(c) { (*x - max).exp() } else { 0.0 };
                        total += *x;
                    }
                    for x in row.iter_mut() {
                        *x /= total;
                    }
                }
                add_block(&mut out, s * lq, h * dv, &p.matmul(&vb)?);
                probs.push(p);
            }
        }
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                probs,
                heads,
                segments,
                scale,
            },
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::concat_cols(&vals)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::concat_rows(&vals)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).slice_cols(start, len)?;
        Ok(self.push(out, Op::SliceCols(x, start)))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).slice_rows(start, len)?;
        Ok(self.push(out, Op::SliceRows(x, start)))
    }

    pub fn repeat_row(&mut self, row: Var, n: usize) -> Result<Var> {
        let rv = self.value(row);
        if rv.rows() != 1 {
            return Err(Error::shape(
                "repeat_row",
                format!("expected a single row, got {:?}", rv.shape()),
            ));
        }
        let out = Matrix::from_fn(n, rv.cols(), |_, c| rv.get(0, c));
        Ok(self.push(out, Op::RepeatRow(row)))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).sum_squares();
        self.push(Matrix::filled(1, 1, s), Op::SumSquares(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Matrix::filled(1, 1, s), Op::Sum(x))
    }

    /// Adjoints of the 1×1 node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("loss must be 1x1, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    // dA += G·Bᵀ, dB += Aᵀ·G
                    let ga = accumulator(&mut grads, *a, av.shape());
                    gemm(GemmOperand::plain(&g), GemmOperand::transposed(bv), ga, 1.0);
                    let gb = accumulator(&mut grads, *b, bv.shape());
                    gemm(GemmOperand::transposed(av), GemmOperand::plain(&g), gb, 1.0);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g, 1.0);
                    accumulate(&mut grads, *b, &g, 1.0);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, &g, 1.0);
                    accumulate(&mut grads, *b, &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let ga = g.hadamard(self.value(*b))?;
                    let gb = g.hadamard(self.value(*a))?;
                    accumulate(&mut grads, *a, &ga, 1.0);
                    accumulate(&mut grads, *b, &gb, 1.0);
                }
                Op::AddRow(x, row) => {
                    accumulate(&mut grads, *x, &g, 1.0);
                    let gr = accumulator(&mut grads, *row, (1, g.cols()));
                    for r in 0..g.rows() {
                        for (o, v) in gr.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                Op::Scale(x, k) => accumulate(&mut grads, *x, &g, *k),
                Op::Silu(x) => {
                    let d = self.value(*x).zip_map(&g, |v, gv| {
                        let s = sigmoid(v);
                        gv * s * (1.0 + v * (1.0 - s))
                    })?;
                    accumulate(&mut grads, *x, &d, 1.0);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let (n, m) = xhat.shape();
                    let gv = self.value(*gain).row(0).to_vec();
                    let mut dgain = vec![0.0; m];
                    let mut dbias = vec![0.0; m];
                    let mut dx = Matrix::zeros(n, m);
                    let mut dxhat = vec![0.0; m];
                    for r in 0..n {
                        let (gr, xr) = (g.row(r), xhat.row(r));
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for c in 0..m {
                            dgain[c] += gr[c] * xr[c];
                            dbias[c] += gr[c];
                            dxhat[c] = gr[c] * gv[c];
                            sum_d += dxhat[c];
                            sum_dx += dxhat[c] * xr[c];
                        }
                        let k = inv_std[r] / m as f64;
                        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = k * (m as f64 * dxhat[c] - sum_d - xr[c] * sum_dx);
                        }
                    }
                    accumulate(&mut grads, *x, &dx, 1.0);
                    accumulate(&mut grads, *gain, &Matrix::row_vector(&dgain), 1.0);
                    accumulate(&mut grads, *bias, &Matrix::row_vector(&dbias), 1.0);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    probs,
                    heads,
                    segments,
                    scale,
                } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let (lq, lk) = (qv.rows() / segments, kv.rows() / segments);
                    let (dq, dv) = (qv.cols() / heads, vv.cols() / heads);
                    let mut gq = Matrix::zeros(qv.rows(), qv.cols());
                    let mut gk = Matrix::zeros(kv.rows(), kv.cols());
                    let mut gvm = Matrix::zeros(vv.rows(), vv.cols());
                    for s in 0..*segments {
                        for h in 0..*heads {
                            let p = &probs[s * heads + h];
                            let gb = block(&g, s * lq, lq, h * dv, dv);
                            let qb = block(qv, s * lq, lq, h * dq, dq);
                            let kb = block(kv, s * lk, lk, h * dq, dq);
                            let vb = block(vv, s * lk, lk, h * dv, dv);
                            add_block(&mut gvm, s * lk, h * dv, &p.t_matmul(&gb)?);
                            // softmax adjoint, then the 1/√d scaling
                            let mut ds = gb.matmul_t(&vb)?;
                            for r in 0..lq {
                                let pr = p.row(r);
                                let row = ds.row_mut(r);
                                let dot: f64 = row.iter().zip(pr).map(|(a, b)| a * b).sum();
                                for (d, pi) in row.iter_mut().zip(pr) {
                                    *d = pi * (*d - dot) * scale;
                                }
                            }
                            add_block(&mut gq, s * lq, h * dq, &ds.matmul(&kb)?);
                            add_block(&mut gk, s * lk, h * dq, &ds.t_matmul(&qb)?);
                        }
                    }
                    accumulate(&mut grads, *q, &gq, 1.0);
                    accumulate(&mut grads, *k, &gk, 1.0);
                    accumulate(&mut grads, *v, &gvm, 1.0);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        accumulate(&mut grads, p, &g.slice_cols(start, w)?, 1.0);
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let h = self.value(p).rows();
                        accumulate(&mut grads, p, &g.slice_rows(start, h)?, 1.0);
                        start += h;
                    }
                }
                Op::SliceCols(x, start) => {
                    let gx = accumulator(&mut grads, *x, self.value(*x).shape());
                    for r in 0..g.rows() {
                        let dst = &mut gx.row_mut(r)[*start..*start + g.cols()];
                        for (o, v) in dst.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                Op::SliceRows(x, start) => {
                    let gx = accumulator(&mut grads, *x, self.value(*x).shape());
                    for r in 0..g.rows() {
                        for (o, v) in gx.row_mut(start + r).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                Op::RepeatRow(row) => {
                    let gr = accumulator(&mut grads, *row, (1, g.cols()));
                    for r in 0..g.rows() {
                        for (o, v) in gr.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                Op::SumSquares(x) => {
                    let k = 2.0 * g.get(0, 0);
                    accumulate(&mut grads, *x, self.value(*x), k);
                }
                Op::Sum(x) => {
                    let s = self.value(*x).shape();
                    accumulate(&mut grads, *x, &Matrix::filled(s.0, s.1, g.get(0, 0)), 1.0);
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Copy of the `rows × cols` block at (`r0`, `c0`).
fn block(m: &Matrix, r0: usize, rows: usize, c0: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |r, c| m.get(r0 + r, c0 + c))
}

fn add_block(dst: &mut Matrix, r0: usize, c0: usize, src: &Matrix) {
    for r in 0..src.rows() {
        let row = &mut dst.row_mut(r0 + r)[c0..c0 + src.cols()];
        for (o, v) in row.iter_mut().zip(src.row(r)) {
            *o += v;
        }
    }
}

fn accumulator<'a>(
    grads: &'a mut [Option<Matrix>],
    v: Var,
    shape: (usize, usize),
) -> &'a mut Matrix {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: &Matrix, k: f64) {
    match &mut grads[v.0] {
        Some(acc) => acc
            .add_scaled_assign(g, k)
            .expect("adjoint shape matches its node"),
        slot @ None => *slot = Some(if k == 1.0 { g.clone() } else { g.scale(k) }),
    }
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Adjoint of `v`, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
