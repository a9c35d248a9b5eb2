//! Building-block layers: spiral convolution, layer norm, linear maps, and
//! the residual graph block.

use std::sync::Arc;

use rand::Rng;

use crate::numeric::{xavier_uniform, Tape, Tensor, Var, LN_EPS};

use super::params::{Binding, ParamId, ParamStore};
use super::ModelError;

/// Shared linear map over concatenated spiral neighborhoods. The weight has
/// one row block per spiral slot, so its row count is `slots * c_in`.
#[derive(Debug, Clone)]
pub struct SpiralConv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub slots: usize,
}

impl SpiralConv {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        slots: usize,
        c_in: usize,
        c_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        SpiralConv {
            weight: store.add(format!("{name}.w"), xavier_uniform(rng, slots * c_in, c_out)),
            bias: store.add(format!("{name}.b"), Tensor::zeros(&[c_out])),
            slots,
        }
    }

    pub fn apply(
        &self,
        tape: &mut Tape,
        binding: &mut Binding,
        store: &ParamStore,
        x: Var,
        table: &Arc<Vec<i64>>,
    ) -> Result<Var, ModelError> {
        let g = tape.gather(x, table.clone(), self.slots)?;
        let w = binding.var(tape, store, self.weight);
        let y = tape.matmul(g, w)?;
        let b = binding.var(tape, store, self.bias);
        Ok(tape.add_bias(y, b)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormLayer {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormLayer {
    pub fn init(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        LayerNormLayer {
            gain: store.add(format!("{name}.g"), Tensor::filled(&[channels], 1.0)),
            bias: store.add(format!("{name}.b"), Tensor::zeros(&[channels])),
        }
    }

    pub fn apply(
        &self,
        tape: &mut Tape,
        binding: &mut Binding,
        store: &ParamStore,
        x: Var,
    ) -> Result<Var, ModelError> {
        let g = binding.var(tape, store, self.gain);
        let b = binding.var(tape, store, self.bias);
        Ok(tape.layer_norm(x, g, b, LN_EPS)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Linear {
            weight: store.add(format!("{name}.w"), xavier_uniform(rng, c_in, c_out)),
            bias: store.add(format!("{name}.b"), Tensor::zeros(&[c_out])),
        }
    }

    pub fn apply(
        &self,
        tape: &mut Tape,
        binding: &mut Binding,
        store: &ParamStore,
        x: Var,
    ) -> Result<Var, ModelError> {
        let w = binding.var(tape, store, self.weight);
        let y = tape.matmul(x, w)?;
        let b = binding.var(tape, store, self.bias);
        Ok(tape.add_bias(y, b)?)
    }
}

/// Basic residual block on mesh features: the 2-d convolutions of the image
/// original become spiral convolutions and the batch norms layer norms.
/// Channels are unchanged so the skip needs no projection.
#[derive(Debug, Clone)]
pub struct GraphResBlock {
    pub conv1: SpiralConv,
    pub norm1: LayerNormLayer,
    pub conv2: SpiralConv,
    pub norm2: LayerNormLayer,
}

impl GraphResBlock {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        slots: usize,
        channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        GraphResBlock {
            conv1: SpiralConv::init(store, &format!("{name}.conv1"), slots, channels, channels, rng),
            norm1: LayerNormLayer::init(store, &format!("{name}.norm1"), channels),
            conv2: SpiralConv::init(store, &format!("{name}.conv2"), slots, channels, channels, rng),
            norm2: LayerNormLayer::init(store, &format!("{name}.norm2"), channels),
        }
    }

    pub fn apply(
        &self,
        tape: &mut Tape,
        binding: &mut Binding,
        store: &ParamStore,
        x: Var,
        table: &Arc<Vec<i64>>,
    ) -> Result<Var, ModelError> {
        let a = self.conv1.apply(tape, binding, store, x, table)?;
        let a = self.norm1.apply(tape, binding, store, a)?;
        let a = tape.elu(a);
        let a = self.conv2.apply(tape, binding, store, a, table)?;
        let a = self.norm2.apply(tape, binding, store, a)?;
        Ok(tape.add(x, a)?)
    }
}
