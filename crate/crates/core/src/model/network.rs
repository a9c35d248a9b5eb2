//! The full network: convolutional encoder stub, token transformer, staged
//! multi-path mesh decoder, and the vertex head.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hierarchy::MeshHierarchy;
use crate::numeric::checkpoint::{load_checkpoint, save_checkpoint};
use crate::numeric::{
    encoder_block, xavier_uniform, AttentionParams, AttentionVars, Tape, Tensor, Var,
};

use super::fusion::{Fusion, ResamplePlan};
use super::layers::{GraphResBlock, Linear, SpiralConv};
use super::params::{Binding, ParamId, ParamStore};
use super::ModelError;

/// Architecture knobs. `channels` is per hierarchy level, finest first, and
/// must have one entry per level; the stage count equals the level count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub encoder_channels: [usize; 2],
    pub channels: Vec<usize>,
    /// Cross-check only; when present it must match the hierarchy's tables.
    pub spiral_lengths: Option<Vec<usize>>,
    pub heads: usize,
    pub ff_hidden: usize,
    pub attention: bool,
    pub single_path: bool,
    pub blocks_per_stage: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 224,
            encoder_channels: [8, 16],
            channels: vec![16, 32, 32, 64, 64],
            spiral_lengths: None,
            heads: 4,
            ff_hidden: 128,
            attention: true,
            single_path: false,
            blocks_per_stage: 1,
        }
    }
}

const ENC_KERNEL: usize = 5;
const ENC_STRIDE: usize = 2;
const ENC_PAD: usize = 2;

#[derive(Debug, Clone)]
struct Encoder {
    k1: ParamId,
    b1: ParamId,
    k2: ParamId,
    b2: ParamId,
    fc: Linear,
}

fn conv_kernel(
    store: &mut ParamStore,
    name: &str,
    c_out: usize,
    c_in: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> ParamId {
    // Xavier scale from the flattened fan; the 4-d layout is cosmetic.
    let flat = xavier_uniform(rng, c_in * k * k, c_out);
    let t = Tensor::from_vec(&[c_out, c_in, k, k], flat.values().to_vec()).unwrap();
    store.add(name, t)
}

/// Handles for one registered attention block, mirroring `AttentionParams`.
#[derive(Debug, Clone)]
struct AttnIds {
    heads: usize,
    wq: Vec<ParamId>,
    wk: Vec<ParamId>,
    wv: Vec<ParamId>,
    wo: ParamId,
    bo: ParamId,
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    ff_w1: ParamId,
    ff_b1: ParamId,
    ff_w2: ParamId,
    ff_b2: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
}

impl AttnIds {
    fn register(store: &mut ParamStore, prefix: &str, p: AttentionParams) -> Self {
        let reg_vec = |store: &mut ParamStore, tag: &str, ts: Vec<Tensor>| -> Vec<ParamId> {
            ts.into_iter()
                .enumerate()
                .map(|(i, t)| store.add(format!("{prefix}.{tag}{i}"), t))
                .collect()
        };
        let wq = reg_vec(store, "wq", p.wq);
        let wk = reg_vec(store, "wk", p.wk);
        let wv = reg_vec(store, "wv", p.wv);
        AttnIds {
            heads: p.heads,
            wq,
            wk,
            wv,
            wo: store.add(format!("{prefix}.wo"), p.wo),
            bo: store.add(format!("{prefix}.bo"), p.bo),
            ln1_gain: store.add(format!("{prefix}.ln1_gain"), p.ln1_gain),
            ln1_bias: store.add(format!("{prefix}.ln1_bias"), p.ln1_bias),
            ff_w1: store.add(format!("{prefix}.ff_w1"), p.ff_w1),
            ff_b1: store.add(format!("{prefix}.ff_b1"), p.ff_b1),
            ff_w2: store.add(format!("{prefix}.ff_w2"), p.ff_w2),
            ff_b2: store.add(format!("{prefix}.ff_b2"), p.ff_b2),
            ln2_gain: store.add(format!("{prefix}.ln2_gain"), p.ln2_gain),
            ln2_bias: store.add(format!("{prefix}.ln2_bias"), p.ln2_bias),
        }
    }

    fn vars(&self, tape: &mut Tape, binding: &mut Binding, store: &ParamStore) -> AttentionVars {
        let bind_vec = |tape: &mut Tape, binding: &mut Binding, ids: &[ParamId]| -> Vec<Var> {
            ids.iter().map(|&id| binding.var(tape, store, id)).collect()
        };
        AttentionVars {
            heads: self.heads,
            wq: bind_vec(tape, binding, &self.wq),
            wk: bind_vec(tape, binding, &self.wk),
            wv: bind_vec(tape, binding, &self.wv),
            wo: binding.var(tape, store, self.wo),
            bo: binding.var(tape, store, self.bo),
            ln1_gain: binding.var(tape, store, self.ln1_gain),
            ln1_bias: binding.var(tape, store, self.ln1_bias),
            ff_w1: binding.var(tape, store, self.ff_w1),
            ff_b1: binding.var(tape, store, self.ff_b1),
            ff_w2: binding.var(tape, store, self.ff_w2),
            ff_b2: binding.var(tape, store, self.ff_b2),
            ln2_gain: binding.var(tape, store, self.ln2_gain),
            ln2_bias: binding.var(tape, store, self.ln2_bias),
        }
    }
}

#[derive(Debug, Clone)]
struct Stage {
    // (level, residual blocks run at that level)
    blocks: Vec<(usize, Vec<GraphResBlock>)>,
    fusion: Fusion,
}

/// Mesh reconstruction network over a fixed hierarchy. Decoder stage `k`
/// keeps the `k` coarsest levels active and each transition fuses them into
/// the next stage's set, so resolution grows one level per stage; the
/// single-path variant keeps only the finest active level instead.
#[derive(Debug)]
pub struct MeshDecoder {
    pub config: ModelConfig,
    pub store: ParamStore,
    encoder: Encoder,
    attention: Option<AttnIds>,
    stages: Vec<Stage>,
    head: SpiralConv,
    plan: ResamplePlan,
    tables: Vec<Arc<Vec<i64>>>,
    level_sizes: Vec<usize>,
}

impl MeshDecoder {
    pub fn new(
        config: ModelConfig,
        hierarchy: &MeshHierarchy,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let levels = hierarchy.level_count();
        if config.channels.len() != levels {
            return Err(ModelError::ConfigMismatch {
                reason: format!(
                    "{} channel entries for {} hierarchy levels",
                    config.channels.len(),
                    levels
                ),
            });
        }
        if let Some(lengths) = &config.spiral_lengths {
            let actual: Vec<usize> = hierarchy.levels.iter().map(|l| l.spiral.length).collect();
            if lengths != &actual {
                return Err(ModelError::ConfigMismatch {
                    reason: format!("spiral lengths {lengths:?} but hierarchy has {actual:?}"),
                });
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let sizes = hierarchy.level_sizes();
        let coarsest = levels - 1;
        let c_last = config.channels[coarsest];
        let n_last = sizes[coarsest];

        let [e1, e2] = config.encoder_channels;
        let encoder = Encoder {
            k1: conv_kernel(&mut store, "enc.conv1.k", e1, 3, ENC_KERNEL, &mut rng),
            b1: store.add("enc.conv1.b", Tensor::zeros(&[e1])),
            k2: conv_kernel(&mut store, "enc.conv2.k", e2, e1, ENC_KERNEL, &mut rng),
            b2: store.add("enc.conv2.b", Tensor::zeros(&[e2])),
            fc: Linear::init(&mut store, "enc.fc", e2, n_last * c_last, &mut rng),
        };

        let attention = if config.attention {
            let p = AttentionParams::init(c_last, config.heads, config.ff_hidden, &mut rng)?;
            Some(AttnIds::register(&mut store, "attn", p))
        } else {
            None
        };

        let slots: Vec<usize> = hierarchy.levels.iter().map(|l| l.spiral.length).collect();
        let mut stages = Vec::with_capacity(levels);
        for si in 0..levels {
            let newest = coarsest - si;
            let active: Vec<usize> = if config.single_path {
                vec![newest]
            } else {
                (newest..=coarsest).collect()
            };
            let mut blocks = Vec::new();
            for &level in &active {
                let mut per_level = Vec::new();
                for b in 0..config.blocks_per_stage {
                    per_level.push(GraphResBlock::init(
                        &mut store,
                        &format!("s{si}.l{level}.b{b}"),
                        slots[level],
                        config.channels[level],
                        &mut rng,
                    ));
                }
                blocks.push((level, per_level));
            }
            let out_levels: Vec<usize> = if si + 1 < levels {
                if config.single_path {
                    vec![newest - 1]
                } else {
                    (newest - 1..=coarsest).collect()
                }
            } else {
                vec![0]
            };
            let fusion = Fusion::init(
                &mut store,
                &format!("s{si}.fuse"),
                &active,
                &out_levels,
                &config.channels,
                &mut rng,
            );
            stages.push(Stage { blocks, fusion });
        }

        let head = SpiralConv::init(&mut store, "head", slots[0], config.channels[0], 3, &mut rng);

        Ok(MeshDecoder {
            config,
            store,
            encoder,
            attention,
            stages,
            head,
            plan: ResamplePlan::new(hierarchy),
            tables: hierarchy
                .levels
                .iter()
                .map(|l| Arc::new(l.spiral.entries.clone()))
                .collect(),
            level_sizes: sizes,
        })
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn finest_size(&self) -> usize {
        self.level_sizes[0]
    }

    /// Records the whole network on `tape`; returns vertex positions
    /// `[finest_count, 3]`. The image must already be normalized.
    pub fn forward(
        &self,
        tape: &mut Tape,
        binding: &mut Binding,
        image: &Tensor,
    ) -> Result<Var, ModelError> {
        let s = self.config.image_size;
        if image.shape() != [3, s, s] {
            return Err(ModelError::BadImage {
                expected: vec![3, s, s],
                got: image.shape().to_vec(),
            });
        }
        let store = &self.store;
        let x = tape.leaf(image.clone());
        let k1 = binding.var(tape, store, self.encoder.k1);
        let b1 = binding.var(tape, store, self.encoder.b1);
        let x = tape.conv2d(x, k1, b1, ENC_STRIDE, ENC_PAD)?;
        let x = tape.elu(x);
        let k2 = binding.var(tape, store, self.encoder.k2);
        let b2 = binding.var(tape, store, self.encoder.b2);
        let x = tape.conv2d(x, k2, b2, ENC_STRIDE, ENC_PAD)?;
        let x = tape.elu(x);
        let pooled = tape.mean_spatial(x)?;
        let latent = self.encoder.fc.apply(tape, binding, store, pooled)?;

        let coarsest = self.level_sizes.len() - 1;
        let c_last = self.config.channels[coarsest];
        let tokens = tape.reshape(latent, &[self.level_sizes[coarsest], c_last])?;
        let tokens = match &self.attention {
            Some(ids) => {
                let vars = ids.vars(tape, binding, store);
                encoder_block(tape, tokens, &vars)?
            }
            None => tokens,
        };

        let mut feats: BTreeMap<usize, Var> = BTreeMap::new();
        feats.insert(coarsest, tokens);
        for stage in &self.stages {
            for (level, blocks) in &stage.blocks {
                let mut cur = feats[level];
                for block in blocks {
                    cur = block.apply(tape, binding, store, cur, &self.tables[*level])?;
                }
                feats.insert(*level, cur);
            }
            feats = stage.fusion.apply(tape, binding, store, &feats, &self.plan)?;
        }

        let fused = feats[&0];
        self.head.apply(tape, binding, store, fused, &self.tables[0])
    }

    /// Forward plus the mean per-vertex L1 against a constant target.
    pub fn loss_on(
        &self,
        tape: &mut Tape,
        binding: &mut Binding,
        image: &Tensor,
        target: &Tensor,
    ) -> Result<(Var, Var), ModelError> {
        let pred = self.forward(tape, binding, image)?;
        let loss = tape.l1_mean_rows(pred, target)?;
        Ok((pred, loss))
    }

    /// Inference on a frozen model.
    pub fn predict(&self, image: &Tensor) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let mut binding = Binding::new(&self.store);
        let out = self.forward(&mut tape, &mut binding, image)?;
        Ok(tape.value(out).clone())
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        Ok(save_checkpoint(path, &self.store.named())?)
    }

    pub fn load(&mut self, path: &Path) -> Result<(), ModelError> {
        let entries = load_checkpoint(path)?;
        self.store.load_values(entries)
    }
}
