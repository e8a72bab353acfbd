use std::collections::HashMap;

use rand::Rng;

use super::graph::{Gradients, StatUpdate};
use super::ops::BN_MOMENTUM;
use super::{Dims5, Tensor5};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor5,
    /// `false` for buffers such as batch-norm running statistics.
    pub trainable: bool,
}

/// Named parameter tensors, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor5, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "parameter `{name}` registered twice"
        );
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            tensor: tensor.with_requires_grad(trainable),
            trainable,
        });
        id
    }

    /// Conv weight `(out, in, kt, kh, kw)` drawn from the He/Kaiming uniform
    /// distribution with bound `sqrt(6 / fan_in)`.
    pub fn add_kaiming(&mut self, name: impl Into<String>, dims: Dims5, rng: &mut impl Rng) -> ParamId {
        let fan_in = (dims.c * dims.t * dims.h * dims.w).max(1);
        let bound = (6.0 / fan_in as f32).sqrt();
        let data = (0..dims.numel())
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let tensor = Tensor5::new(dims, data).expect("length matches dims");
        self.add(name, tensor, true)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor5 {
        &self.params[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor5 {
        &mut self.params[id.0].tensor
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param)> {
        self.params
            .iter_mut()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p))
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| p.trainable)
            .map(|(id, _)| id)
            .collect()
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.tensor.numel())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.grad = None;
        }
    }

    /// Adds `scale * grad` into each parameter's gradient buffer.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f32) {
        for (id, g) in grads.params() {
            let t = &mut self.params[id.0].tensor;
            let buf = t.grad.get_or_insert_with(|| vec![0.0; g.len()]);
            for (acc, v) in buf.iter_mut().zip(g) {
                *acc += scale * v;
            }
        }
    }

    /// Folds batch statistics into the running mean/variance buffers.
    pub fn apply_stat_updates(&mut self, updates: &[StatUpdate]) {
        for u in updates {
            let m = BN_MOMENTUM;
            for (r, b) in self.params[u.running_mean.0]
                .tensor
                .data_mut()
                .iter_mut()
                .zip(&u.batch_mean)
            {
                *r = (1.0 - m) * *r + m * b;
            }
            for (r, b) in self.params[u.running_var.0]
                .tensor
                .data_mut()
                .iter_mut()
                .zip(&u.batch_var)
            {
                *r = (1.0 - m) * *r + m * b;
            }
        }
    }

    /// Copies every tensor of `other` into the identically named tensor of
    /// `self`, failing on the first missing, extra, or mis-shaped entry.
    pub fn load_values(&mut self, other: &[(String, Tensor5)]) -> Result<()> {
        use crate::error::CheckpointError as E;
        let mut seen = vec![false; self.params.len()];
        for (name, tensor) in other {
            let id = self
                .id(name)
                .ok_or_else(|| Error::from(E::Unexpected(name.clone())))?;
            let slot = &mut self.params[id.0].tensor;
            if slot.dims() != tensor.dims() {
                return Err(E::ShapeMismatch {
                    name: name.clone(),
                    expected: slot.dims().as_array().to_vec(),
                    found: tensor.dims().as_array().to_vec(),
                }
                .into());
            }
            slot.data_mut().copy_from_slice(tensor.data());
            seen[id.0] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(E::Missing(self.params[i].name.clone()).into());
        }
        Ok(())
    }
}
