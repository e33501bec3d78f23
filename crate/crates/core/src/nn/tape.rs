//! Reverse-mode automatic differentiation over a flat operation tape.
//!
//! Each forward builder records one node; `backward` walks the tape in
//! reverse accumulating vector-Jacobian products. Values are stored at the
//! nodes, so the backward pass needs no recomputation.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TapeId(pub(crate) usize);

impl TapeId {
    /// Position in the tape's node list (index into `backward` results).
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Gelu(usize),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    Softmax(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
    },
    Sum(usize),
    Mean(usize),
    MseLoss(usize, usize),
    Transpose(usize),
    Reshape(usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows {
        x: usize,
        start: usize,
        len: usize,
    },
    SliceCols {
        x: usize,
        start: usize,
        len: usize,
    },
    MulRow(usize, usize),
    Clamp {
        x: usize,
        lo: f64,
        hi: f64,
    },
    MinElem(usize, usize),
}

struct Node {
    op: Op,
    value: Tensor,
}

const LN_EPS: f64 = 1e-5;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.shape.clone(),
        rhs: rhs.shape.clone(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: TapeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> TapeId {
        self.nodes.push(Node { op, value });
        TapeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> TapeId {
        self.push(Op::Leaf, value)
    }

    /// [m,k] x [k,n] -> [m,n]; 1-D operands are treated as single rows.
    pub fn matmul(&mut self, a: TapeId, b: TapeId) -> Result<TapeId> {
        let (m, k) = self.value(a).dims2();
        let (k2, n) = self.value(b).dims2();
        if k != k2 {
            return Err(shape_err("matmul", self.value(a), self.value(b)));
        }
        let av = &self.value(a).data;
        let bv = &self.value(b).data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &av[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (kk, &aval) in arow.iter().enumerate() {
                if aval != 0.0 {
                    let brow = &bv[kk * n..(kk + 1) * n];
                    for (o, &bval) in orow.iter_mut().zip(brow) {
                        *o += aval * bval;
                    }
                }
            }
        }
        Ok(self.push(Op::Matmul(a.0, b.0), Tensor::new(vec![m, n], out)))
    }

    /// Adds a [n] bias to every row of a [m,n] tensor.
    pub fn add_bias(&mut self, x: TapeId, bias: TapeId) -> Result<TapeId> {
        let (m, n) = self.value(x).dims2();
        if self.value(bias).shape != vec![n] {
            return Err(shape_err("add_bias", self.value(x), self.value(bias)));
        }
        let mut out = self.value(x).data.clone();
        let b = &self.value(bias).data;
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += b[j];
            }
        }
        let shape = self.value(x).shape.clone();
        Ok(self.push(Op::AddBias(x.0, bias.0), Tensor::new(shape, out)))
    }

    fn zip_op(
        &mut self,
        name: &'static str,
        a: TapeId,
        b: TapeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TapeId> {
        if self.value(a).shape != self.value(b).shape {
            return Err(shape_err(name, self.value(a), self.value(b)));
        }
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.value(a).shape.clone();
        Ok(self.push(op, Tensor::new(shape, data)))
    }

    pub fn add(&mut self, a: TapeId, b: TapeId) -> Result<TapeId> {
        self.zip_op("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: TapeId, b: TapeId) -> Result<TapeId> {
        self.zip_op("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: TapeId, b: TapeId) -> Result<TapeId> {
        self.zip_op("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    fn map_op(&mut self, x: TapeId, f: impl Fn(f64) -> f64, op: Op) -> TapeId {
        let data = self.value(x).data.iter().map(|&v| f(v)).collect();
        let shape = self.value(x).shape.clone();
        self.push(op, Tensor::new(shape, data))
    }

    pub fn scale(&mut self, x: TapeId, c: f64) -> TapeId {
        self.map_op(x, |v| c * v, Op::Scale(x.0, c))
    }

    pub fn tanh(&mut self, x: TapeId) -> TapeId {
        self.map_op(x, f64::tanh, Op::Tanh(x.0))
    }

    pub fn gelu(&mut self, x: TapeId) -> TapeId {
        self.map_op(x, gelu, Op::Gelu(x.0))
    }

    pub fn exp(&mut self, x: TapeId) -> TapeId {
        self.map_op(x, f64::exp, Op::Exp(x.0))
    }

    pub fn ln(&mut self, x: TapeId) -> TapeId {
        self.map_op(x, f64::ln, Op::Ln(x.0))
    }

    pub fn sqrt(&mut self, x: TapeId) -> TapeId {
        self.map_op(x, f64::sqrt, Op::Sqrt(x.0))
    }

    /// Row-wise softmax over the last dimension.
    pub fn softmax(&mut self, x: TapeId) -> TapeId {
        let (m, n) = self.value(x).dims2();
        let xv = &self.value(x).data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut sum = 0.0;
            for j in 0..n {
                let e = (row[j] - max).exp();
                out[i * n + j] = e;
                sum += e;
            }
            for j in 0..n {
                out[i * n + j] /= sum;
            }
        }
        let shape = self.value(x).shape.clone();
        self.push(Op::Softmax(x.0), Tensor::new(shape, out))
    }

    /// Layer normalization over the last dimension with learnable scale and
    /// shift.
    pub fn layer_norm(&mut self, x: TapeId, gamma: TapeId, beta: TapeId) -> Result<TapeId> {
        let (m, n) = self.value(x).dims2();
        if self.value(gamma).shape != vec![n] || self.value(beta).shape != vec![n] {
            return Err(shape_err("layer_norm", self.value(x), self.value(gamma)));
        }
        let xv = &self.value(x).data;
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for j in 0..n {
                out[i * n + j] = (row[j] - mean) * inv * g[j] + b[j];
            }
        }
        let shape = self.value(x).shape.clone();
        Ok(self.push(
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
            },
            Tensor::new(shape, out),
        ))
    }

    pub fn sum(&mut self, x: TapeId) -> TapeId {
        let s = self.value(x).data.iter().sum();
        self.push(Op::Sum(x.0), Tensor::scalar(s))
    }

    pub fn mean(&mut self, x: TapeId) -> TapeId {
        let s: f64 = self.value(x).data.iter().sum();
        let n = self.value(x).len() as f64;
        self.push(Op::Mean(x.0), Tensor::scalar(s / n))
    }

    /// Mean squared error between two same-shape tensors.
    pub fn mse_loss(&mut self, a: TapeId, b: TapeId) -> Result<TapeId> {
        if self.value(a).shape != self.value(b).shape {
            return Err(shape_err("mse_loss", self.value(a), self.value(b)));
        }
        let n = self.value(a).len() as f64;
        let s: f64 = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(&x, &y)| (x - y).powi(2))
            .sum();
        Ok(self.push(Op::MseLoss(a.0, b.0), Tensor::scalar(s / n)))
    }

    pub fn transpose(&mut self, x: TapeId) -> TapeId {
        let (m, n) = self.value(x).dims2();
        let xv = &self.value(x).data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = xv[i * n + j];
            }
        }
        self.push(Op::Transpose(x.0), Tensor::new(vec![n, m], out))
    }

    pub fn reshape(&mut self, x: TapeId, shape: Vec<usize>) -> Result<TapeId> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.value(x).shape.clone(),
                rhs: shape,
            });
        }
        let data = self.value(x).data.clone();
        Ok(self.push(Op::Reshape(x.0), Tensor::new(shape, data)))
    }

    /// Vertically stacks same-width blocks.
    pub fn concat_rows(&mut self, parts: &[TapeId]) -> Result<TapeId> {
        assert!(!parts.is_empty());
        let n = self.value(parts[0]).dims2().1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (m, w) = self.value(p).dims2();
            if w != n {
                return Err(shape_err("concat_rows", self.value(parts[0]), self.value(p)));
            }
            rows += m;
            data.extend_from_slice(&self.value(p).data);
        }
        Ok(self.push(
            Op::ConcatRows(parts.iter().map(|p| p.0).collect()),
            Tensor::new(vec![rows, n], data),
        ))
    }

    /// Horizontally concatenates same-height blocks.
    pub fn concat_cols(&mut self, parts: &[TapeId]) -> Result<TapeId> {
        assert!(!parts.is_empty());
        let m = self.value(parts[0]).dims2().0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).dims2().1).collect();
        for &p in parts {
            if self.value(p).dims2().0 != m {
                return Err(shape_err("concat_cols", self.value(parts[0]), self.value(p)));
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; m * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = &self.value(p).data;
            for i in 0..m {
                data[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&pv[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        Ok(self.push(
            Op::ConcatCols(parts.iter().map(|p| p.0).collect()),
            Tensor::new(vec![m, total], data),
        ))
    }

    pub fn slice_rows(&mut self, x: TapeId, start: usize, len: usize) -> Result<TapeId> {
        let (m, n) = self.value(x).dims2();
        if start + len > m {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                lhs: self.value(x).shape.clone(),
                rhs: vec![start, len],
            });
        }
        let data = self.value(x).data[start * n..(start + len) * n].to_vec();
        Ok(self.push(
            Op::SliceRows {
                x: x.0,
                start,
                len,
            },
            Tensor::new(vec![len, n], data),
        ))
    }

    pub fn slice_cols(&mut self, x: TapeId, start: usize, len: usize) -> Result<TapeId> {
        let (m, n) = self.value(x).dims2();
        if start + len > n {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                lhs: self.value(x).shape.clone(),
                rhs: vec![start, len],
            });
        }
        let xv = &self.value(x).data;
        let mut data = vec![0.0; m * len];
        for i in 0..m {
            data[i * len..(i + 1) * len].copy_from_slice(&xv[i * n + start..i * n + start + len]);
        }
        Ok(self.push(
            Op::SliceCols {
                x: x.0,
                start,
                len,
            },
            Tensor::new(vec![m, len], data),
        ))
    }

    /// Multiplies every row of [m,n] `x` elementwise by an [n] vector.
    pub fn mul_row(&mut self, x: TapeId, row: TapeId) -> Result<TapeId> {
        let (m, n) = self.value(x).dims2();
        if self.value(row).len() != n {
            return Err(shape_err("mul_row", self.value(x), self.value(row)));
        }
        let rv = &self.value(row).data;
        let mut out = self.value(x).data.clone();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] *= rv[j];
            }
        }
        let shape = self.value(x).shape.clone();
        Ok(self.push(Op::MulRow(x.0, row.0), Tensor::new(shape, out)))
    }

    /// Elementwise clamp; gradients pass only through the interior.
    pub fn clamp(&mut self, x: TapeId, lo: f64, hi: f64) -> TapeId {
        self.map_op(x, |v| v.clamp(lo, hi), Op::Clamp { x: x.0, lo, hi })
    }

    /// Elementwise minimum; the gradient follows the smaller operand (ties
    /// go to the first).
    pub fn min_elem(&mut self, a: TapeId, b: TapeId) -> Result<TapeId> {
        self.zip_op("min_elem", a, b, |x, y| x.min(y), Op::MinElem(a.0, b.0))
    }

    /// Reverse-mode gradients of a scalar `root` with respect to every node.
    pub fn backward(&self, root: TapeId) -> Vec<Option<Tensor>> {
        assert_eq!(
            self.value(root).len(),
            1,
            "backward root must be scalar, got shape {:?}",
            self.value(root).shape
        );
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let g = &grad.data;
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let (m, k) = self.nodes[*a].value.dims2();
                    let (_, n) = self.nodes[*b].value.dims2();
                    let av = &self.nodes[*a].value.data;
                    let bv = &self.nodes[*b].value.data;
                    let da = acc(&mut grads, *a, &self.nodes[*a].value.shape);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let darow = &mut da.data[i * k..(i + 1) * k];
                        for kk in 0..k {
                            let brow = &bv[kk * n..(kk + 1) * n];
                            let mut s = 0.0;
                            for j in 0..n {
                                s += grow[j] * brow[j];
                            }
                            darow[kk] += s;
                        }
                    }
                    let db = acc(&mut grads, *b, &self.nodes[*b].value.shape);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let arow = &av[i * k..(i + 1) * k];
                        for (kk, &aval) in arow.iter().enumerate() {
                            if aval != 0.0 {
                                let dbrow = &mut db.data[kk * n..(kk + 1) * n];
                                for j in 0..n {
                                    dbrow[j] += aval * grow[j];
                                }
                            }
                        }
                    }
                }
                Op::AddBias(x, bias) => {
                    let (m, n) = self.nodes[*x].value.dims2();
                    let dx = acc(&mut grads, *x, &self.nodes[*x].value.shape);
                    for (o, &gv) in dx.data.iter_mut().zip(g) {
                        *o += gv;
                    }
                    let db = acc(&mut grads, *bias, &self.nodes[*bias].value.shape);
                    for i in 0..m {
                        for j in 0..n {
                            db.data[j] += g[i * n + j];
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(&mut grads, *a, g, &self.nodes[*a].value.shape);
                    add_into(&mut grads, *b, g, &self.nodes[*b].value.shape);
                }
                Op::Sub(a, b) => {
                    add_into(&mut grads, *a, g, &self.nodes[*a].value.shape);
                    let db = acc(&mut grads, *b, &self.nodes[*b].value.shape);
                    for (o, &gv) in db.data.iter_mut().zip(g) {
                        *o -= gv;
                    }
                }
                Op::Mul(a, b) => {
                    let bv = self.nodes[*b].value.data.clone();
                    let da = acc(&mut grads, *a, &self.nodes[*a].value.shape);
                    for ((o, &gv), &bvv) in da.data.iter_mut().zip(g).zip(&bv) {
                        *o += gv * bvv;
                    }
                    let av = self.nodes[*a].value.data.clone();
                    let db = acc(&mut grads, *b, &self.nodes[*b].value.shape);
                    for ((o, &gv), &avv) in db.data.iter_mut().zip(g).zip(&av) {
                        *o += gv * avv;
                    }
                }
                Op::Scale(x, c) => {
                    let dx = acc(&mut grads, *x, &self.nodes[*x].value.shape);
                    for (o, &gv) in dx.data.iter_mut().zip(g) {
                        *o += c * gv;
                    }
                }
                Op::Tanh(x) => {
                    let y = self.nodes[idx].value.data.clone();
                    let dx = acc(&mut grads, *x, &self.nodes[*x].value.shape);
                    for ((o, &gv), &yv) in dx.data.iter_mut().zip(g).zip(&y) {
                        *o += gv * (1.0 - yv * yv);
                    }
                }
                Op::Gelu(x) => {
                    let xs = self.nodes[*x].value.data.clone();
                    let dx = acc(&mut grads, *x, &self.nodes[*x].value.shape);
                    for ((o, &gv), &xv) in dx.data.iter_mut().zip(g).zip(&xs) {
                        *o += gv * gelu_grad(xv);
                    }
                }
                Op::Exp(x) => {
                    let y = self.nodes[idx].value.data.clone();
                    let dx = acc(&mut grads, *x, &self.nodes[*x].value.shape);
                    for ((o, &gv), &yv) in dx.data.iter_mut().zip(g).zip(&y) {
                        *o += gv * yv;
                    }
                }
                Op::Ln(x) => {
                    let xs = self.nodes[*x].value.data.clone();
                    let dx = acc(&mut grads, *x, &self.nodes[*x].value.shape);
                    for ((o, &gv), &xv) in dx.data.iter_mut().zip(g).zip(&xs) {
                        *o += gv / xv;
                    }
                }
                Op::Sqrt(x) => {
                    let y = self.nodes[idx].value.data.clone();
                    let dx = acc(&mut grads, *x, &self.nodes[*x].value.shape);
                    for ((o, &gv), &yv) in dx.data.iter_mut().zip(g).zip(&y) {
                        *o += gv / (2.0 * yv);
                    }
                }
                Op::Softmax(x) => {
                    let (m, n) = self.nodes[idx].value.dims2();
                    let y = self.nodes[idx].value.data.clone();
                    let dx = acc(&mut grads, *x, &self.nodes[*x].value.shape);
                    for i in 0..m {
                        let yrow = &y[i * n..(i + 1) * n];
                        let grow = &g[i * n..(i + 1) * n];
                        let dot: f64 = yrow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
                        let drow = &mut dx.data[i * n..(i + 1) * n];
                        for j in 0..n {
                            drow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                }
                Op::LayerNorm { x, gamma, beta } => {
                    let (m, n) = self.nodes[*x].value.dims2();
                    let xs = self.nodes[*x].value.data.clone();
                    let gs = self.nodes[*gamma].value.data.clone();
                    // Per-row recompute of the normalized values.
                    let mut xhat = vec![0.0; m * n];
                    let mut inv_std = vec![0.0; m];
                    for i in 0..m {
                        let row = &xs[i * n..(i + 1) * n];
                        let mean = row.iter().sum::<f64>() / n as f64;
                        let var =
                            row.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                        let inv = 1.0 / (var + LN_EPS).sqrt();
                        inv_std[i] = inv;
                        for j in 0..n {
                            xhat[i * n + j] = (row[j] - mean) * inv;
                        }
                    }
                    {
                        let dgamma = acc(&mut grads, *gamma, &self.nodes[*gamma].value.shape);
                        for i in 0..m {
                            for j in 0..n {
                                dgamma.data[j] += g[i * n + j] * xhat[i * n + j];
                            }
                        }
                    }
                    {
                        let dbeta = acc(&mut grads, *beta, &self.nodes[*beta].value.shape);
                        for i in 0..m {
                            for j in 0..n {
                                dbeta.data[j] += g[i * n + j];
                            }
                        }
                    }
                    let dx = acc(&mut grads, *x, &self.nodes[*x].value.shape);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let xrow = &xhat[i * n..(i + 1) * n];
                        let mut mean_dy = 0.0;
                        let mut mean_dy_xhat = 0.0;
                        for j in 0..n {
                            let dy = grow[j] * gs[j];
                            mean_dy += dy;
                            mean_dy_xhat += dy * xrow[j];
                        }
                        mean_dy /= n as f64;
                        mean_dy_xhat /= n as f64;
                        let drow = &mut dx.data[i * n..(i + 1) * n];
                        for j in 0..n {
                            let dy = grow[j] * gs[j];
                            drow[j] += (dy - mean_dy - xrow[j] * mean_dy_xhat) * inv_std[i];
                        }
                    }
                }
                Op::Sum(x) => {
                    let gv = g[0];
                    let dx = acc(&mut grads, *x, &self.nodes[*x].value.shape);
                    for o in dx.data.iter_mut() {
                        *o += gv;
                    }
                }
                Op::Mean(x) => {
                    let n = self.nodes[*x].value.len() as f64;
                    let gv = g[0] / n;
                    let dx = acc(&mut grads, *x, &self.nodes[*x].value.shape);
                    for o in dx.data.iter_mut() {
                        *o += gv;
                    }
                }
                Op::MseLoss(a, b) => {
                    let n = self.nodes[*a].value.len() as f64;
                    let gv = g[0] * 2.0 / n;
                    let diff: Vec<f64> = self.nodes[*a]
                        .value
                        .data
                        .iter()
                        .zip(&self.nodes[*b].value.data)
                        .map(|(&x, &y)| x - y)
                        .collect();
                    let da = acc(&mut grads, *a, &self.nodes[*a].value.shape);
                    for (o, &d) in da.data.iter_mut().zip(&diff) {
                        *o += gv * d;
                    }
                    let db = acc(&mut grads, *b, &self.nodes[*b].value.shape);
                    for (o, &d) in db.data.iter_mut().zip(&diff) {
                        *o -= gv * d;
                    }
                }
                Op::Transpose(x) => {
                    let (n, m) = self.nodes[idx].value.dims2();
                    let dx = acc(&mut grads, *x, &self.nodes[*x].value.shape);
                    for i in 0..n {
                        for j in 0..m {
                            dx.data[j * n + i] += g[i * m + j];
                        }
                    }
                }
                Op::Reshape(x) => {
                    add_into(&mut grads, *x, g, &self.nodes[*x].value.shape);
                }
                Op::ConcatRows(parts) => {
                    let n = self.nodes[idx].value.dims2().1;
                    let mut row = 0;
                    for &p in parts {
                        let m = self.nodes[p].value.dims2().0;
                        let dp = acc(&mut grads, p, &self.nodes[p].value.shape);
                        for (o, &gv) in dp
                            .data
                            .iter_mut()
                            .zip(&g[row * n..(row + m) * n])
                        {
                            *o += gv;
                        }
                        row += m;
                    }
                }
                Op::ConcatCols(parts) => {
                    let (m, total) = self.nodes[idx].value.dims2();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.dims2().1;
                        let dp = acc(&mut grads, p, &self.nodes[p].value.shape);
                        for i in 0..m {
                            for j in 0..w {
                                dp.data[i * w + j] += g[i * total + offset + j];
                            }
                        }
                        offset += w;
                    }
                }
                Op::SliceRows { x, start, len } => {
                    let n = self.nodes[*x].value.dims2().1;
                    let dx = acc(&mut grads, *x, &self.nodes[*x].value.shape);
                    for (o, &gv) in dx.data[start * n..(start + len) * n]
                        .iter_mut()
                        .zip(g)
                    {
                        *o += gv;
                    }
                }
                Op::SliceCols { x, start, len } => {
                    let (m, n) = self.nodes[*x].value.dims2();
                    let dx = acc(&mut grads, *x, &self.nodes[*x].value.shape);
                    for i in 0..m {
                        for j in 0..*len {
                            dx.data[i * n + start + j] += g[i * len + j];
                        }
                    }
                }
                Op::MulRow(x, row) => {
                    let (m, n) = self.nodes[*x].value.dims2();
                    let rv = self.nodes[*row].value.data.clone();
                    let xv = self.nodes[*x].value.data.clone();
                    {
                        let dx = acc(&mut grads, *x, &self.nodes[*x].value.shape);
                        for i in 0..m {
                            for j in 0..n {
                                dx.data[i * n + j] += g[i * n + j] * rv[j];
                            }
                        }
                    }
                    let dr = acc(&mut grads, *row, &self.nodes[*row].value.shape);
                    for i in 0..m {
                        for j in 0..n {
                            dr.data[j] += g[i * n + j] * xv[i * n + j];
                        }
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    let xs = self.nodes[*x].value.data.clone();
                    let dx = acc(&mut grads, *x, &self.nodes[*x].value.shape);
                    for ((o, &gv), &xv) in dx.data.iter_mut().zip(g).zip(&xs) {
                        if xv > *lo && xv < *hi {
                            *o += gv;
                        }
                    }
                }
                Op::MinElem(a, b) => {
                    let av = self.nodes[*a].value.data.clone();
                    let bv = self.nodes[*b].value.data.clone();
                    {
                        let da = acc(&mut grads, *a, &self.nodes[*a].value.shape);
                        for ((o, &gv), (&x, &y)) in
                            da.data.iter_mut().zip(g).zip(av.iter().zip(&bv))
                        {
                            if x <= y {
                                *o += gv;
                            }
                        }
                    }
                    let db = acc(&mut grads, *b, &self.nodes[*b].value.shape);
                    for ((o, &gv), (&x, &y)) in db.data.iter_mut().zip(g).zip(av.iter().zip(&bv))
                    {
                        if y < x {
                            *o += gv;
                        }
                    }
                }
            }
            grads[idx] = Some(grad);
        }
        grads
    }
}

/// Gets (allocating if needed) the gradient accumulator for a node.
fn acc<'a>(grads: &'a mut [Option<Tensor>], idx: usize, shape: &[usize]) -> &'a mut Tensor {
    grads[idx].get_or_insert_with(|| Tensor::zeros(shape.to_vec()))
}

fn add_into(grads: &mut [Option<Tensor>], idx: usize, g: &[f64], shape: &[usize]) {
    let dst = acc(grads, idx, shape);
    for (o, &gv) in dst.data.iter_mut().zip(g) {
        *o += gv;
    }
}

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}
