//! Parameter registry shared by every layer of a model.

use std::collections::BTreeMap;

use crate::numeric::{Gradients, Parameter, Tape, Tensor, Var};

use super::ModelError;

/// Handle into a [`ParamStore`]; stable for the life of the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Owns every trainable tensor of a model in insertion order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter::new(name, value));
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    /// Total scalar count across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn named(&self) -> Vec<(&str, &Tensor)> {
        self.params
            .iter()
            .map(|p| (p.name.as_str(), &p.value))
            .collect()
    }

    /// Replaces stored values from checkpoint entries. The entry set must
    /// cover exactly the registered names with matching shapes.
    pub fn load_values(&mut self, entries: Vec<(String, Tensor)>) -> Result<(), ModelError> {
        if entries.len() != self.params.len() {
            return Err(ModelError::CheckpointMismatch {
                reason: format!(
                    "expected {} tensors, checkpoint holds {}",
                    self.params.len(),
                    entries.len()
                ),
            });
        }
        for (name, tensor) in entries {
            let id = self
                .by_name
                .get(&name)
                .copied()
                .ok_or_else(|| ModelError::CheckpointMismatch {
                    reason: format!("unknown parameter {name}"),
                })?;
            let p = &mut self.params[id];
            if p.value.shape() != tensor.shape() {
                return Err(ModelError::CheckpointMismatch {
                    reason: format!(
                        "{name}: shape {:?} does not match stored {:?}",
                        tensor.shape(),
                        p.value.shape()
                    ),
                });
            }
            p.value = tensor;
        }
        Ok(())
    }

    /// Divides accumulated gradients by `n`, for batch averaging.
    pub fn scale_grads(&mut self, n: usize) {
        let inv = 1.0 / n as f64;
        for p in &mut self.params {
            if let Some(g) = p.grad.as_mut() {
                for v in g.values_mut() {
                    *v *= inv;
                }
            }
        }
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }
}

/// Per-tape cache of bound parameter leaves. Build one per forward pass.
#[derive(Debug)]
pub struct Binding {
    vars: Vec<Option<Var>>,
}

impl Binding {
    pub fn new(store: &ParamStore) -> Self {
        Binding {
            vars: vec![None; store.len()],
        }
    }

    /// Returns the leaf for `id`, binding the current value on first use.
    pub fn var(&mut self, tape: &mut Tape, store: &ParamStore, id: ParamId) -> Var {
        match self.vars[id.0] {
            Some(v) => v,
            None => {
                let v = tape.leaf(store.value(id).clone());
                self.vars[id.0] = Some(v);
                v
            }
        }
    }

    /// Moves gradients for every bound leaf into the store, adding onto any
    /// gradient already accumulated there.
    pub fn harvest(&self, grads: &mut Gradients, store: &mut ParamStore) {
        for (slot, var) in self.vars.iter().enumerate() {
            let Some(var) = var else { continue };
            let Some(g) = grads.take(*var) else { continue };
            let p = &mut store.params_mut()[slot];
            match p.grad.as_mut() {
                Some(acc) => {
                    for (a, b) in acc.values_mut().iter_mut().zip(g.values()) {
                        *a += b;
                    }
                }
                None => p.grad = Some(g),
            }
        }
    }
}
