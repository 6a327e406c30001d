use rand::Rng;

use super::tensor::{matmul_into, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};
use crate::rng::SeedStream;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    L2NormRows {
        x: Var,
        norms: Vec<f64>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Sum(Var),
    /// Scalar-valued function whose gradient w.r.t. its input was computed
    /// alongside the value.
    Fused {
        x: Var,
        local_grad: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of differentiable operations.
///
/// A tape is built once per forward pass and consumed by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Accumulated gradients, one slot per recorded value.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        if tb.cols() != k {
            return Err(Error::shape(format!(
                "matmul_nt of {:?} and {:?}: inner dimensions {k} and {} differ",
                ta.shape(),
                tb.shape(),
                tb.cols()
            )));
        }
        let value = Tensor::matrix(m, n, matmul_nt(ta.data(), tb.data(), m, k, n))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMulNt(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Adds row vector `row` (length = columns of `m`) to every row of `m`.
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let (tm, tr) = (self.value(m), self.value(row));
        if tr.len() != tm.cols() {
            return Err(Error::shape(format!(
                "row broadcast of {:?} onto {:?}",
                tr.shape(),
                tm.shape()
            )));
        }
        let mut value = tm.as_matrix();
        let c = tm.cols();
        for r in 0..tm.rows() {
            for (o, &b) in value.row_mut(r).iter_mut().zip(tr.data()) {
                *o += b;
            }
        }
        debug_assert_eq!(value.cols(), c);
        let rg = self.rg(&[m, row]);
        Ok(self.push(value, Op::AddRow(m, row), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Elementwise product with a constant (e.g. a dropout mask).
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        let value = self.value(a).mul(&c)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::MulConst(a, c), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        let rg = self.rg(&[a]);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        let c = tx.cols();
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::shape(format!(
                "layer_norm over {:?} with affine params {:?} / {:?}",
                tx.shape(),
                self.value(gamma).shape(),
                self.value(beta).shape()
            )));
        }
        let (xhat, inv_std) = standardize_rows(tx, eps);
        let mut value = xhat.clone();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        for r in 0..value.rows() {
            for ((o, &gv), &bv) in value.row_mut(r).iter_mut().zip(g).zip(b) {
                *o = *o * gv + bv;
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let mut value = self.value(x).as_matrix();
        let mut norms = Vec::with_capacity(value.rows());
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
            norms.push(n);
        }
        let rg = self.rg(&[x]);
        self.push(value, Op::L2NormRows { x, norms }, rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.value(x).slice_cols(start, len)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SliceCols { x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let value = {
            let ts: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
            Tensor::concat_cols(&ts)?
        };
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let value = {
            let ts: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
            Tensor::concat_rows(&ts)?
        };
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    /// Records a scalar function of `x` given its value and gradient.
    pub fn fused_scalar(&mut self, x: Var, value: f64, local_grad: Tensor) -> Result<Var> {
        if local_grad.len() != self.value(x).len() {
            return Err(Error::shape(format!(
                "fused gradient {:?} for input {:?}",
                local_grad.shape(),
                self.value(x).shape()
            )));
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(value), Op::Fused { x, local_grad }, rg))
    }

    /// Inverted dropout with a mask fully determined by `seed`.
    pub fn dropout(&mut self, x: Var, p: f64, seed: u64, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Param(format!(
                "dropout probability {p} not in [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let shape = self.value(x).shape().to_vec();
        let mask = dropout_mask(&shape, p, seed);
        self.mul_const(x, mask)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.propagate(&node.op, &node.value, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, data: Vec<f64>) {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        debug_assert_eq!(data.len(), node.value.len());
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(&data) {
                    *a += b;
                }
            }
            slot @ None => {
                *slot = Some(
                    Tensor::new(node.value.shape(), data).expect("gradient shape mirrors value"),
                );
            }
        }
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, matmul_nt(g.data(), tb.data(), m, n, k));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, matmul_tn(ta.data(), g.data(), m, k, n));
                }
            }
            Op::MatMulNt(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; m * k];
                    matmul_into(g.data(), tb.data(), &mut da, m, n, k);
                    self.accumulate(grads, *a, da);
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, matmul_tn(g.data(), ta.data(), m, n, k));
                }
            }
            Op::Transpose(a) => {
                self.accumulate(grads, *a, g.transpose().into_data());
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.data().to_vec());
                self.accumulate(grads, *b, g.data().to_vec());
            }
            Op::AddRow(m, row) => {
                self.accumulate(grads, *m, g.data().to_vec());
                if self.requires_grad(*row) {
                    let c = g.cols();
                    let mut dr = vec![0.0; c];
                    for r in 0..g.rows() {
                        for (d, &v) in dr.iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *row, dr);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let d = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *a, d);
                }
                if self.requires_grad(*b) {
                    let d = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, d);
                }
            }
            Op::MulConst(a, c) => {
                let d = g.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, g.data().iter().map(|v| v * c).collect());
            }
            Op::Relu(a) => {
                let ta = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(ta.data())
                    .map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::SoftmaxRows(a) => {
                let c = out.cols();
                let mut d = vec![0.0; out.len()];
                for r in 0..out.rows() {
                    let (y, gy) = (out.row(r), g.row(r));
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        d[r * c + j] = y[j] * (gy[j] - dot);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = xhat.cols();
                let gm = self.value(*gamma).data();
                if self.requires_grad(*gamma) || self.requires_grad(*beta) {
                    let mut dg = vec![0.0; c];
                    let mut db = vec![0.0; c];
                    for r in 0..xhat.rows() {
                        for j in 0..c {
                            dg[j] += g.row(r)[j] * xhat.row(r)[j];
                            db[j] += g.row(r)[j];
                        }
                    }
                    self.accumulate(grads, *gamma, dg);
                    self.accumulate(grads, *beta, db);
                }
                if self.requires_grad(*x) {
                    let mut dx = vec![0.0; xhat.len()];
                    let cf = c as f64;
                    for r in 0..xhat.rows() {
                        let xh = xhat.row(r);
                        let dxh: Vec<f64> = g.row(r).iter().zip(gm).map(|(a, b)| a * b).collect();
                        let s1: f64 = dxh.iter().sum();
                        let s2: f64 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            dx[r * c + j] = inv_std[r] / cf * (cf * dxh[j] - s1 - xh[j] * s2);
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::L2NormRows { x, norms } => {
                let c = out.cols();
                let mut d = vec![0.0; out.len()];
                for r in 0..out.rows() {
                    let (y, gy) = (out.row(r), g.row(r));
                    if norms[r] == 0.0 {
                        d[r * c..(r + 1) * c].copy_from_slice(gy);
                        continue;
                    }
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        d[r * c + j] = (gy[j] - y[j] * dot) / norms[r];
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::SliceCols { x, start } => {
                if self.requires_grad(*x) {
                    let tx = self.value(*x);
                    let c = tx.cols();
                    let len = g.cols();
                    let mut d = vec![0.0; tx.len()];
                    for r in 0..tx.rows() {
                        d[r * c + start..r * c + start + len].copy_from_slice(g.row(r));
                    }
                    self.accumulate(grads, *x, d);
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.requires_grad(p) {
                        let mut d = Vec::with_capacity(g.rows() * w);
                        for r in 0..g.rows() {
                            d.extend_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        self.accumulate(grads, p, d);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.accumulate(grads, p, g.data()[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g.item(); n]);
            }
            Op::Fused { x, local_grad } => {
                let s = g.item();
                self.accumulate(grads, *x, local_grad.data().iter().map(|v| v * s).collect());
            }
        }
    }
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(m: &Tensor) -> Tensor {
    let mut out = m.as_matrix();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

/// Per-row `(x - mean) / sqrt(var + eps)` and the `1 / sqrt(var + eps)` factors.
fn standardize_rows(m: &Tensor, eps: f64) -> (Tensor, Vec<f64>) {
    let mut out = m.as_matrix();
    let c = out.cols() as f64;
    let mut inv = Vec::with_capacity(out.rows());
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let mean = row.iter().sum::<f64>() / c;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c;
        let is = 1.0 / (var + eps).sqrt();
        row.iter_mut().for_each(|v| *v = (*v - mean) * is);
        inv.push(is);
    }
    (out, inv)
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, else `1 / (1 - p)`.
pub fn dropout_mask(shape: &[usize], p: f64, seed: u64) -> Tensor {
    let mut rng = SeedStream::new(seed).rng();
    let keep = 1.0 / (1.0 - p);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    Tensor::new(shape, data).expect("mask shape")
}

/// Value-level dropout (no tape).
pub fn seeded_dropout(m: &Tensor, p: f64, seed: u64, training: bool) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Param(format!(
            "dropout probability {p} not in [0, 1)"
        )));
    }
    if !training || p == 0.0 {
        return Ok(m.clone());
    }
    m.mul(&dropout_mask(m.shape(), p, seed))
}
