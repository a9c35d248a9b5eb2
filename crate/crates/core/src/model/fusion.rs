//! Cross-resolution feature fusion over the mesh hierarchy.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use crate::hierarchy::MeshHierarchy;
use crate::numeric::{xavier_uniform, SharedSparse, Tape, Tensor, Var};

use super::params::{Binding, ParamId, ParamStore};
use super::ModelError;

/// Shared handles to the hierarchy's resampling matrices. Level indices are
/// finest first, so moving toward level 0 means upsampling.
#[derive(Debug, Clone)]
pub struct ResamplePlan {
    down: Vec<SharedSparse>,
    up: Vec<SharedSparse>,
}

impl ResamplePlan {
    pub fn new(h: &MeshHierarchy) -> Self {
        ResamplePlan {
            down: h.down.iter().map(|m| Arc::new(m.clone())).collect(),
            up: h.up.iter().map(|m| Arc::new(m.clone())).collect(),
        }
    }

    /// Chains per-step resampling matrices to carry features between any two
    /// levels; a no-op when `from == to`.
    pub fn resample(
        &self,
        tape: &mut Tape,
        x: Var,
        from: usize,
        to: usize,
    ) -> Result<Var, ModelError> {
        let mut cur = x;
        if from > to {
            for step in (to..from).rev() {
                cur = tape.sparse_apply(self.up[step].clone(), cur)?;
            }
        } else {
            for step in from..to {
                cur = tape.sparse_apply(self.down[step].clone(), cur)?;
            }
        }
        Ok(cur)
    }
}

/// One fusion layer: every output level is the sum over input levels of the
/// resampled features pushed through a per-pair linear channel map, plus one
/// bias per output level. Purely linear, as in the multi-resolution fusion
/// it mirrors.
#[derive(Debug, Clone)]
pub struct Fusion {
    pub in_levels: Vec<usize>,
    pub out_levels: Vec<usize>,
    // maps[o][i] connects in_levels[i] to out_levels[o]
    maps: Vec<Vec<ParamId>>,
    biases: Vec<ParamId>,
}

impl Fusion {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        in_levels: &[usize],
        out_levels: &[usize],
        channels: &[usize],
        rng: &mut impl Rng,
    ) -> Self {
        let mut maps = Vec::with_capacity(out_levels.len());
        let mut biases = Vec::with_capacity(out_levels.len());
        for &dst in out_levels {
            let mut row = Vec::with_capacity(in_levels.len());
            for &src in in_levels {
                row.push(store.add(
                    format!("{name}.s{src}d{dst}.w"),
                    xavier_uniform(rng, channels[src], channels[dst]),
                ));
            }
            maps.push(row);
            biases.push(store.add(format!("{name}.d{dst}.b"), Tensor::zeros(&[channels[dst]])));
        }
        Fusion {
            in_levels: in_levels.to_vec(),
            out_levels: out_levels.to_vec(),
            maps,
            biases,
        }
    }

    pub fn apply(
        &self,
        tape: &mut Tape,
        binding: &mut Binding,
        store: &ParamStore,
        feats: &BTreeMap<usize, Var>,
        plan: &ResamplePlan,
    ) -> Result<BTreeMap<usize, Var>, ModelError> {
        let mut out = BTreeMap::new();
        for (o, &dst) in self.out_levels.iter().enumerate() {
            let mut acc: Option<Var> = None;
            for (i, &src) in self.in_levels.iter().enumerate() {
                let x = *feats
                    .get(&src)
                    .ok_or(ModelError::MissingLevel { level: src })?;
                let moved = plan.resample(tape, x, src, dst)?;
                let w = binding.var(tape, store, self.maps[o][i]);
                let term = tape.matmul(moved, w)?;
                acc = Some(match acc {
                    Some(a) => tape.add(a, term)?,
                    None => term,
                });
            }
            let b = binding.var(tape, store, self.biases[o]);
            let summed = acc.expect("fusion with no input levels");
            out.insert(dst, tape.add_bias(summed, b)?);
        }
        Ok(out)
    }
}
