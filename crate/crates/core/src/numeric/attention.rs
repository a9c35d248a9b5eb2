//! Transformer encoder block over per-vertex feature rows.
//!
//! Multi-head self-attention with per-head projection matrices, a two-layer
//! ELU feed-forward, and post-norm residual wiring:
//!
//! ```text
//! y1 = LN(x + MHSA(x))
//! y  = LN(y1 + FF(y1))
//! ```
//!
//! Rows are an unordered token set, so the block commutes with row
//! permutations up to rounding.

use rand::Rng;

use super::tape::{Tape, Var};
use super::{NumericError, Tensor};

pub const LN_EPS: f64 = 1e-5;

/// Uniform Xavier/Glorot init for a `[rows, cols]` weight.
pub fn xavier_uniform(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols)
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    Tensor::from_vec(&[rows, cols], values).expect("xavier shape")
}

/// Plain-tensor parameter pack for one encoder block.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub channels: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    pub wq: Vec<Tensor>,
    pub wk: Vec<Tensor>,
    pub wv: Vec<Tensor>,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub ff_w1: Tensor,
    pub ff_b1: Tensor,
    pub ff_w2: Tensor,
    pub ff_b2: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

impl AttentionParams {
    pub fn init(
        channels: usize,
        heads: usize,
        ff_hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, NumericError> {
        if heads == 0 || channels % heads != 0 {
            return Err(NumericError::HeadSplit { channels, heads });
        }
        let d = channels / heads;
        let (mut wq, mut wk, mut wv) = (Vec::new(), Vec::new(), Vec::new());
        for dst in [&mut wq, &mut wk, &mut wv] {
            for _ in 0..heads {
                dst.push(xavier_uniform(rng, channels, d));
            }
        }
        Ok(AttentionParams {
            channels,
            heads,
            ff_hidden,
            wq,
            wk,
            wv,
            wo: xavier_uniform(rng, channels, channels),
            bo: Tensor::zeros(&[channels]),
            ln1_gain: Tensor::filled(&[channels], 1.0),
            ln1_bias: Tensor::zeros(&[channels]),
            ff_w1: xavier_uniform(rng, channels, ff_hidden),
            ff_b1: Tensor::zeros(&[ff_hidden]),
            ff_w2: xavier_uniform(rng, ff_hidden, channels),
            ff_b2: Tensor::zeros(&[channels]),
            ln2_gain: Tensor::filled(&[channels], 1.0),
            ln2_bias: Tensor::zeros(&[channels]),
        })
    }

    /// Tensors with stable names, in checkpoint order.
    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, t) in self.wq.iter().enumerate() {
            out.push((format!("{prefix}.wq{i}"), t.clone()));
        }
        for (i, t) in self.wk.iter().enumerate() {
            out.push((format!("{prefix}.wk{i}"), t.clone()));
        }
        for (i, t) in self.wv.iter().enumerate() {
            out.push((format!("{prefix}.wv{i}"), t.clone()));
        }
        for (name, t) in [
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("ff_w1", &self.ff_w1),
            ("ff_b1", &self.ff_b1),
            ("ff_w2", &self.ff_w2),
            ("ff_b2", &self.ff_b2),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
        ] {
            out.push((format!("{prefix}.{name}"), t.clone()));
        }
        out
    }

    /// Binds every tensor as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> AttentionVars {
        AttentionVars {
            heads: self.heads,
            wq: self.wq.iter().map(|t| tape.leaf(t.clone())).collect(),
            wk: self.wk.iter().map(|t| tape.leaf(t.clone())).collect(),
            wv: self.wv.iter().map(|t| tape.leaf(t.clone())).collect(),
            wo: tape.leaf(self.wo.clone()),
            bo: tape.leaf(self.bo.clone()),
            ln1_gain: tape.leaf(self.ln1_gain.clone()),
            ln1_bias: tape.leaf(self.ln1_bias.clone()),
            ff_w1: tape.leaf(self.ff_w1.clone()),
            ff_b1: tape.leaf(self.ff_b1.clone()),
            ff_w2: tape.leaf(self.ff_w2.clone()),
            ff_b2: tape.leaf(self.ff_b2.clone()),
            ln2_gain: tape.leaf(self.ln2_gain.clone()),
            ln2_bias: tape.leaf(self.ln2_bias.clone()),
        }
    }
}

/// Tape handles for one encoder block, in the same layout as
/// [`AttentionParams`].
#[derive(Debug, Clone)]
pub struct AttentionVars {
    pub heads: usize,
    pub wq: Vec<Var>,
    pub wk: Vec<Var>,
    pub wv: Vec<Var>,
    pub wo: Var,
    pub bo: Var,
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub ff_w1: Var,
    pub ff_b1: Var,
    pub ff_w2: Var,
    pub ff_b2: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
}

/// Full encoder block; returns the output rows.
pub fn encoder_block(tape: &mut Tape, x: Var, p: &AttentionVars) -> Result<Var, NumericError> {
    let (y, _) = encoder_block_with_weights(tape, x, p)?;
    Ok(y)
}

/// Encoder block that also exposes the per-head attention weight matrices
/// (softmax outputs), mainly for inspection in tests.
pub fn encoder_block_with_weights(
    tape: &mut Tape,
    x: Var,
    p: &AttentionVars,
) -> Result<(Var, Vec<Var>), NumericError> {
    let d = tape.value(p.wq[0]).cols();
    let scale = 1.0 / (d as f64).sqrt();
    let mut heads = Vec::with_capacity(p.heads);
    let mut weights = Vec::with_capacity(p.heads);
    for i in 0..p.heads {
        let q = tape.matmul(x, p.wq[i])?;
        let k = tape.matmul(x, p.wk[i])?;
        let v = tape.matmul(x, p.wv[i])?;
        let scores = tape.matmul_transb(q, k)?;
        let scores = tape.scale(scores, scale);
        let w = tape.softmax_rows(scores)?;
        weights.push(w);
        heads.push(tape.matmul(w, v)?);
    }
    let cat = tape.concat_cols(&heads)?;
    let proj = tape.matmul(cat, p.wo)?;
    let attn = tape.add_bias(proj, p.bo)?;
    let res1 = tape.add(x, attn)?;
    let y1 = tape.layer_norm(res1, p.ln1_gain, p.ln1_bias, LN_EPS)?;

    let h = tape.matmul(y1, p.ff_w1)?;
    let h = tape.add_bias(h, p.ff_b1)?;
    let h = tape.elu(h);
    let h = tape.matmul(h, p.ff_w2)?;
    let ff = tape.add_bias(h, p.ff_b2)?;
    let res2 = tape.add(y1, ff)?;
    let y = tape.layer_norm(res2, p.ln2_gain, p.ln2_bias, LN_EPS)?;
    Ok((y, weights))
}
