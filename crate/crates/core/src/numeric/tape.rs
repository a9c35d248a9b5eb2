//! Reverse-mode autodiff over a recorded op tape.
//!
//! [`Tape`] owns every intermediate value. Recording an op computes its
//! result eagerly and stores enough structure to run the reverse pass;
//! [`Tape::backward`] seeds a scalar loss with 1 and accumulates gradients
//! for every node, including leaves bound to trainable parameters.
//!
//! Shape errors surface when the op is recorded, not during backward.

use std::sync::Arc;

use super::sparse::SharedSparse;
use super::{NumericError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a * b^T` so attention scores never materialize a transposed tensor.
    MatMulTransB(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Elu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    },
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    Gather {
        x: Var,
        table: Arc<Vec<i64>>,
        slots: usize,
    },
    SparseApply {
        m: SharedSparse,
        x: Var,
    },
    Conv2d {
        x: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    },
    MeanSpatial(Var),
    Reshape(Var),
    L1MeanRows {
        x: Var,
        target: Tensor,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`]. Nodes the loss never
/// reached have no entry.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

fn matmul_2d(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// `a [m,k] * b[n,k]^T` into `out [m,n]`.
fn matmul_transb_2d(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for p in 0..k {
                acc += arow[p] * brow[p];
            }
            out[i * n + j] += acc;
        }
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t)
    }

    fn want_2d(&self, op: &'static str, v: Var) -> Result<(usize, usize), NumericError> {
        let s = self.value(v).shape();
        if s.len() != 2 {
            return Err(NumericError::RankMismatch {
                op,
                expected: 2,
                shape: s.to_vec(),
            });
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (m, k) = self.want_2d("matmul", a)?;
        let (k2, n) = self.want_2d("matmul", b)?;
        if k != k2 {
            return Err(NumericError::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = Tensor::zeros(&[m, n]);
        matmul_2d(
            self.value(a).values(),
            self.value(b).values(),
            m,
            k,
            n,
            out.values_mut(),
        );
        Ok(self.push(Op::MatMul(a, b), out))
    }

    /// `a * b^T` for `a [m,k]`, `b [n,k]`.
    pub fn matmul_transb(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (m, k) = self.want_2d("matmul_transb", a)?;
        let (n, k2) = self.want_2d("matmul_transb", b)?;
        if k != k2 {
            return Err(NumericError::ShapeMismatch {
                op: "matmul_transb",
                lhs: vec![m, k],
                rhs: vec![n, k2],
            });
        }
        let mut out = Tensor::zeros(&[m, n]);
        matmul_transb_2d(
            self.value(a).values(),
            self.value(b).values(),
            m,
            k,
            n,
            out.values_mut(),
        );
        Ok(self.push(Op::MatMulTransB(a, b), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NumericError::ShapeMismatch {
                op: "add",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut out = self.value(a).clone();
        for (o, v) in out.values_mut().iter_mut().zip(self.value(b).values()) {
            *o += v;
        }
        Ok(self.push(Op::Add(a, b), out))
    }

    /// Adds a `[c]` bias to every row of `[n, c]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, NumericError> {
        let (_, c) = self.want_2d("add_bias", x)?;
        let bs = self.value(bias).shape();
        if bs != [c] {
            return Err(NumericError::ShapeMismatch {
                op: "add_bias",
                lhs: self.value(x).shape().to_vec(),
                rhs: bs.to_vec(),
            });
        }
        let mut out = self.value(x).clone();
        let bv = self.value(bias).values().to_vec();
        for row in out.values_mut().chunks_mut(c) {
            for (o, b) in row.iter_mut().zip(&bv) {
                *o += b;
            }
        }
        Ok(self.push(Op::AddBias(x, bias), out))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let mut out = self.value(x).clone();
        for v in out.values_mut() {
            *v *= factor;
        }
        self.push(Op::Scale(x, factor), out)
    }

    /// ELU with unit alpha: identity for positive inputs, `exp(x) - 1` below.
    pub fn elu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in out.values_mut() {
            *v = elu(*v);
        }
        self.push(Op::Elu(x), out)
    }

    /// Row-wise layer normalization of `[n, c]` with learned gain and bias.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    ) -> Result<Var, NumericError> {
        let (n, c) = self.want_2d("layer_norm", x)?;
        if c == 0 {
            return Err(NumericError::EmptyAxis);
        }
        for (name, v) in [("gain", gain), ("bias", bias)] {
            let s = self.value(v).shape();
            if s != [c] {
                return Err(NumericError::ShapeMismatch {
                    op: if name == "gain" {
                        "layer_norm gain"
                    } else {
                        "layer_norm bias"
                    },
                    lhs: vec![n, c],
                    rhs: s.to_vec(),
                });
            }
        }
        let xv = self.value(x).values().to_vec();
        let gv = self.value(gain).values().to_vec();
        let bv = self.value(bias).values().to_vec();
        let mut out = Tensor::zeros(&[n, c]);
        let ov = out.values_mut();
        for r in 0..n {
            let row = &xv[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                ov[r * c + j] = (row[j] - mean) * inv * gv[j] + bv[j];
            }
        }
        Ok(self.push(Op::LayerNorm { x, gain, bias, eps }, out))
    }

    /// Row-wise softmax of `[n, m]` with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, NumericError> {
        let (n, m) = self.want_2d("softmax_rows", x)?;
        if m == 0 {
            return Err(NumericError::EmptyAxis);
        }
        let mut out = self.value(x).clone();
        for r in 0..n {
            let row = &mut out.values_mut()[r * m..(r + 1) * m];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        Ok(self.push(Op::SoftmaxRows(x), out))
    }

    /// Concatenates `[n, c_i]` tensors along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let Some((&first, _)) = parts.split_first() else {
            return Err(NumericError::EmptyAxis);
        };
        let (n, _) = self.want_2d("concat_cols", first)?;
        let mut total = 0;
        for &p in parts {
            let (pn, pc) = self.want_2d("concat_cols", p)?;
            if pn != n {
                return Err(NumericError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            total += pc;
        }
        let mut out = Tensor::zeros(&[n, total]);
        let mut offset = 0;
        for &p in parts {
            let pc = self.value(p).cols();
            let pv = self.value(p).values().to_vec();
            for r in 0..n {
                let dst = &mut out.values_mut()[r * total + offset..r * total + offset + pc];
                dst.copy_from_slice(&pv[r * pc..(r + 1) * pc]);
            }
            offset += pc;
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out))
    }

    /// Gathers `slots` rows of `x [n, c]` per output row into `[n, slots*c]`.
    /// `table` is row-major `[n, slots]`; `-1` slots contribute zeros.
    pub fn gather(
        &mut self,
        x: Var,
        table: Arc<Vec<i64>>,
        slots: usize,
    ) -> Result<Var, NumericError> {
        let (n, c) = self.want_2d("gather", x)?;
        if table.len() != n * slots {
            return Err(NumericError::ShapeMismatch {
                op: "gather",
                lhs: vec![n, slots],
                rhs: vec![table.len()],
            });
        }
        for &idx in table.iter() {
            if idx < -1 || idx >= n as i64 {
                return Err(NumericError::GatherOutOfBounds { index: idx, rows: n });
            }
        }
        let xv = self.value(x).values().to_vec();
        let mut out = Tensor::zeros(&[n, slots * c]);
        let ov = out.values_mut();
        for v in 0..n {
            for s in 0..slots {
                let idx = table[v * slots + s];
                if idx >= 0 {
                    let src = &xv[idx as usize * c..(idx as usize + 1) * c];
                    ov[v * slots * c + s * c..v * slots * c + (s + 1) * c].copy_from_slice(src);
                }
            }
        }
        Ok(self.push(Op::Gather { x, table, slots }, out))
    }

    /// Applies a sparse resampling matrix to dense features.
    pub fn sparse_apply(&mut self, m: SharedSparse, x: Var) -> Result<Var, NumericError> {
        let out = m.apply(self.value(x))?;
        Ok(self.push(Op::SparseApply { m, x }, out))
    }

    /// 2-d convolution of `x [c_in, h, w]` with `kernel [c_out, c_in, k, k]`
    /// and zero padding.
    pub fn conv2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var, NumericError> {
        let xs = self.value(x).shape().to_vec();
        let ks = self.value(kernel).shape().to_vec();
        if xs.len() != 3 {
            return Err(NumericError::RankMismatch {
                op: "conv2d input",
                expected: 3,
                shape: xs,
            });
        }
        if ks.len() != 4 {
            return Err(NumericError::RankMismatch {
                op: "conv2d kernel",
                expected: 4,
                shape: ks,
            });
        }
        let (cin, h, w) = (xs[0], xs[1], xs[2]);
        let (cout, kcin, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if kcin != cin {
            return Err(NumericError::ShapeMismatch {
                op: "conv2d",
                lhs: xs,
                rhs: ks,
            });
        }
        if self.value(bias).shape() != [cout] {
            return Err(NumericError::ShapeMismatch {
                op: "conv2d bias",
                lhs: vec![cout],
                rhs: self.value(bias).shape().to_vec(),
            });
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(NumericError::KernelTooLarge {
                kernel: kh.max(kw),
                size: h.min(w),
                pad,
            });
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let xv = self.value(x).values().to_vec();
        let kv = self.value(kernel).values().to_vec();
        let bv = self.value(bias).values().to_vec();
        let mut out = Tensor::zeros(&[cout, oh, ow]);
        let ov = out.values_mut();
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bv[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as i64 - pad as i64;
                            if iy < 0 || iy >= h as i64 {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as i64 - pad as i64;
                                if ix < 0 || ix >= w as i64 {
                                    continue;
                                }
                                acc += xv[(ci * h + iy as usize) * w + ix as usize]
                                    * kv[((co * cin + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    ov[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        Ok(self.push(
            Op::Conv2d {
                x,
                kernel,
                bias,
                stride,
                pad,
            },
            out,
        ))
    }

    /// Means a `[c, h, w]` map over its spatial axes into `[1, c]`.
    pub fn mean_spatial(&mut self, x: Var) -> Result<Var, NumericError> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 3 {
            return Err(NumericError::RankMismatch {
                op: "mean_spatial",
                expected: 3,
                shape: xs,
            });
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let xv = self.value(x).values();
        let mut out = Tensor::zeros(&[1, c]);
        for ci in 0..c {
            out.values_mut()[ci] =
                xv[ci * h * w..(ci + 1) * h * w].iter().sum::<f64>() / (h * w) as f64;
        }
        Ok(self.push(Op::MeanSpatial(x), out))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumericError> {
        let expected: usize = shape.iter().product();
        if expected != self.value(x).len() {
            return Err(NumericError::BadValueCount {
                shape: shape.to_vec(),
                expected,
                actual: self.value(x).len(),
            });
        }
        let out = Tensor::from_vec(shape, self.value(x).values().to_vec())?;
        Ok(self.push(Op::Reshape(x), out))
    }

    /// Mean over rows of the row-wise L1 distance to a constant target:
    /// `(1/n) * sum_i |x_i - t_i|_1`.
    pub fn l1_mean_rows(&mut self, x: Var, target: &Tensor) -> Result<Var, NumericError> {
        let (n, _) = self.want_2d("l1_mean_rows", x)?;
        if self.value(x).shape() != target.shape() {
            return Err(NumericError::ShapeMismatch {
                op: "l1_mean_rows",
                lhs: self.value(x).shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        let total: f64 = self
            .value(x)
            .values()
            .iter()
            .zip(target.values())
            .map(|(a, b)| (a - b).abs())
            .sum();
        let out = Tensor::scalar(total / n as f64);
        Ok(self.push(
            Op::L1MeanRows {
                x,
                target: target.clone(),
            },
            out,
        ))
    }

    /// Reverse pass from a single-element loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericError> {
        if self.value(loss).len() != 1 {
            return Err(NumericError::RankMismatch {
                op: "backward",
                expected: 1,
                shape: self.value(loss).shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &dy, &mut grads);
            grads[idx] = Some(dy);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|v| Tensor::from_vec(self.nodes[i].value.shape(), v).expect("grad shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, len: usize, add: impl FnOnce(&mut [f64])) {
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        add(slot);
    }

    fn backprop_node(&self, idx: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                let av = self.value(*a).values();
                let bv = self.value(*b).values();
                // da = dy * b^T, db = a^T * dy
                Self::accumulate(grads, *a, m * k, |da| {
                    matmul_transb_2d(dy, bv, m, n, k, da);
                });
                Self::accumulate(grads, *b, k * n, |db| {
                    for p in 0..k {
                        for i in 0..m {
                            let av_ip = av[i * k + p];
                            if av_ip == 0.0 {
                                continue;
                            }
                            let dyrow = &dy[i * n..(i + 1) * n];
                            let dbrow = &mut db[p * n..(p + 1) * n];
                            for j in 0..n {
                                dbrow[j] += av_ip * dyrow[j];
                            }
                        }
                    }
                });
            }
            Op::MatMulTransB(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).rows();
                let av = self.value(*a).values();
                let bv = self.value(*b).values();
                // y = a * b^T: da = dy * b, db = dy^T * a
                Self::accumulate(grads, *a, m * k, |da| {
                    matmul_2d(dy, bv, m, n, k, da);
                });
                Self::accumulate(grads, *b, n * k, |db| {
                    for j in 0..n {
                        for i in 0..m {
                            let d = dy[i * n + j];
                            if d == 0.0 {
                                continue;
                            }
                            let arow = &av[i * k..(i + 1) * k];
                            let dbrow = &mut db[j * k..(j + 1) * k];
                            for p in 0..k {
                                dbrow[p] += d * arow[p];
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                for &v in [a, b] {
                    Self::accumulate(grads, v, dy.len(), |g| {
                        for (gi, di) in g.iter_mut().zip(dy) {
                            *gi += di;
                        }
                    });
                }
            }
            Op::AddBias(x, bias) => {
                let c = self.value(*bias).len();
                Self::accumulate(grads, *x, dy.len(), |g| {
                    for (gi, di) in g.iter_mut().zip(dy) {
                        *gi += di;
                    }
                });
                Self::accumulate(grads, *bias, c, |g| {
                    for row in dy.chunks(c) {
                        for (gi, di) in g.iter_mut().zip(row) {
                            *gi += di;
                        }
                    }
                });
            }
            Op::Scale(x, f) => {
                let f = *f;
                Self::accumulate(grads, *x, dy.len(), |g| {
                    for (gi, di) in g.iter_mut().zip(dy) {
                        *gi += f * di;
                    }
                });
            }
            Op::Elu(x) => {
                let xv = self.value(*x).values();
                Self::accumulate(grads, *x, dy.len(), |g| {
                    for i in 0..dy.len() {
                        let d = if xv[i] > 0.0 { 1.0 } else { xv[i].exp() };
                        g[i] += d * dy[i];
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let (n, c) = (self.value(*x).rows(), self.value(*x).cols());
                let xv = self.value(*x).values();
                let gv = self.value(*gain).values();
                Self::accumulate(grads, *bias, c, |g| {
                    for row in dy.chunks(c) {
                        for (gi, di) in g.iter_mut().zip(row) {
                            *gi += di;
                        }
                    }
                });
                // Recompute row statistics; cheaper than caching them.
                let mut xhat = vec![0.0; n * c];
                let mut inv_sigma = vec![0.0; n];
                for r in 0..n {
                    let row = &xv[r * c..(r + 1) * c];
                    let mean = row.iter().sum::<f64>() / c as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    inv_sigma[r] = inv;
                    for j in 0..c {
                        xhat[r * c + j] = (row[j] - mean) * inv;
                    }
                }
                Self::accumulate(grads, *gain, c, |g| {
                    for r in 0..n {
                        for j in 0..c {
                            g[j] += dy[r * c + j] * xhat[r * c + j];
                        }
                    }
                });
                Self::accumulate(grads, *x, n * c, |g| {
                    for r in 0..n {
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_xhat = 0.0;
                        for j in 0..c {
                            let dxh = dy[r * c + j] * gv[j];
                            mean_dxhat += dxh;
                            mean_dxhat_xhat += dxh * xhat[r * c + j];
                        }
                        mean_dxhat /= c as f64;
                        mean_dxhat_xhat /= c as f64;
                        for j in 0..c {
                            let dxh = dy[r * c + j] * gv[j];
                            g[r * c + j] += inv_sigma[r]
                                * (dxh - mean_dxhat - xhat[r * c + j] * mean_dxhat_xhat);
                        }
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let (n, m) = (node.value.rows(), node.value.cols());
                let yv = node.value.values();
                Self::accumulate(grads, *x, n * m, |g| {
                    for r in 0..n {
                        let yrow = &yv[r * m..(r + 1) * m];
                        let dyrow = &dy[r * m..(r + 1) * m];
                        let dot: f64 = yrow.iter().zip(dyrow).map(|(y, d)| y * d).sum();
                        for j in 0..m {
                            g[r * m + j] += yrow[j] * (dyrow[j] - dot);
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let n = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    Self::accumulate(grads, p, n * pc, |g| {
                        for r in 0..n {
                            for j in 0..pc {
                                g[r * pc + j] += dy[r * total + offset + j];
                            }
                        }
                    });
                    offset += pc;
                }
            }
            Op::Gather { x, table, slots } => {
                let (n, c) = (self.value(*x).rows(), self.value(*x).cols());
                let slots = *slots;
                Self::accumulate(grads, *x, n * c, |g| {
                    for v in 0..n {
                        for s in 0..slots {
                            let idx = table[v * slots + s];
                            if idx >= 0 {
                                let src = &dy[v * slots * c + s * c..v * slots * c + (s + 1) * c];
                                let dst = &mut g[idx as usize * c..(idx as usize + 1) * c];
                                for k in 0..c {
                                    dst[k] += src[k];
                                }
                            }
                        }
                    }
                });
            }
            Op::SparseApply { m, x } => {
                let c = self.value(*x).cols();
                let xrows = self.value(*x).rows();
                Self::accumulate(grads, *x, xrows * c, |g| {
                    for &(r, j, v) in m.triplets() {
                        let src = &dy[r * c..(r + 1) * c];
                        let dst = &mut g[j * c..(j + 1) * c];
                        for k in 0..c {
                            dst[k] += v * src[k];
                        }
                    }
                });
            }
            Op::Conv2d {
                x,
                kernel,
                bias,
                stride,
                pad,
            } => {
                let xs = self.value(*x).shape().to_vec();
                let ks = self.value(*kernel).shape().to_vec();
                let (cin, h, w) = (xs[0], xs[1], xs[2]);
                let (cout, _, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
                let (oh, ow) = (node.value.shape()[1], node.value.shape()[2]);
                let (stride, pad) = (*stride, *pad);
                let xv = self.value(*x).values();
                let kv = self.value(*kernel).values();
                Self::accumulate(grads, *bias, cout, |g| {
                    for co in 0..cout {
                        g[co] += dy[co * oh * ow..(co + 1) * oh * ow].iter().sum::<f64>();
                    }
                });
                Self::accumulate(grads, *kernel, kv.len(), |g| {
                    for co in 0..cout {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let d = dy[(co * oh + oy) * ow + ox];
                                if d == 0.0 {
                                    continue;
                                }
                                for ci in 0..cin {
                                    for ky in 0..kh {
                                        let iy = (oy * stride + ky) as i64 - pad as i64;
                                        if iy < 0 || iy >= h as i64 {
                                            continue;
                                        }
                                        for kx in 0..kw {
                                            let ix = (ox * stride + kx) as i64 - pad as i64;
                                            if ix < 0 || ix >= w as i64 {
                                                continue;
                                            }
                                            g[((co * cin + ci) * kh + ky) * kw + kx] += d
                                                * xv[(ci * h + iy as usize) * w + ix as usize];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
                Self::accumulate(grads, *x, xv.len(), |g| {
                    for co in 0..cout {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let d = dy[(co * oh + oy) * ow + ox];
                                if d == 0.0 {
                                    continue;
                                }
                                for ci in 0..cin {
                                    for ky in 0..kh {
                                        let iy = (oy * stride + ky) as i64 - pad as i64;
                                        if iy < 0 || iy >= h as i64 {
                                            continue;
                                        }
                                        for kx in 0..kw {
                                            let ix = (ox * stride + kx) as i64 - pad as i64;
                                            if ix < 0 || ix >= w as i64 {
                                                continue;
                                            }
                                            g[(ci * h + iy as usize) * w + ix as usize] += d
                                                * kv[((co * cin + ci) * kh + ky) * kw + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::MeanSpatial(x) => {
                let xs = self.value(*x).shape().to_vec();
                let (c, h, w) = (xs[0], xs[1], xs[2]);
                let scale = 1.0 / (h * w) as f64;
                Self::accumulate(grads, *x, c * h * w, |g| {
                    for ci in 0..c {
                        let d = dy[ci] * scale;
                        for v in &mut g[ci * h * w..(ci + 1) * h * w] {
                            *v += d;
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                Self::accumulate(grads, *x, dy.len(), |g| {
                    for (gi, di) in g.iter_mut().zip(dy) {
                        *gi += di;
                    }
                });
            }
            Op::L1MeanRows { x, target } => {
                let n = self.value(*x).rows();
                let xv = self.value(*x).values();
                let tv = target.values();
                let scale = dy[0] / n as f64;
                Self::accumulate(grads, *x, xv.len(), |g| {
                    for i in 0..xv.len() {
                        g[i] += scale * (xv[i] - tv[i]).signum() * ((xv[i] != tv[i]) as i64 as f64);
                    }
                });
            }
        }
    }
}
