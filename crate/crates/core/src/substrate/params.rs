use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::substrate::scalar::Scalar;
use crate::substrate::tensor::Tensor;

/// Layer group a parameter belongs to; each group has its own learning rate,
/// decay multiplier and dropout probability.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Embedding,
    Encoder,
    Decoder,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [ParamGroup::Embedding, ParamGroup::Encoder, ParamGroup::Decoder];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamGroup::Embedding => "embedding",
            ParamGroup::Encoder => "encoder",
            ParamGroup::Decoder => "decoder",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A trainable tensor together with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct ParamSlot<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub group: ParamGroup,
    pub trainable: bool,
}

impl<T: Scalar> ParamSlot<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>, group: ParamGroup) -> Self {
        let grad = Tensor::zeros(value.shape());
        ParamSlot {
            name: name.into(),
            value,
            grad,
            group,
            trainable: true,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Ordered collection of named parameters. Registration order is the
/// serialization order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    slots: Vec<ParamSlot<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            slots: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>, group: ParamGroup) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::config(format!("duplicate parameter {name}")));
        }
        let id = self.slots.len();
        self.slots.push(ParamSlot::new(name, value, group));
        self.by_name.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &ParamSlot<T> {
        &self.slots[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamSlot<T> {
        &mut self.slots[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamSlot<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn slots(&self) -> &[ParamSlot<T>] {
        &self.slots
    }

    pub fn slots_mut(&mut self) -> &mut [ParamSlot<T>] {
        &mut self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.slots.iter().map(|s| s.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.slots.iter_mut().for_each(ParamSlot::zero_grad);
    }

    pub fn set_group_trainable(&mut self, group: ParamGroup, trainable: bool) {
        for s in self.slots.iter_mut().filter(|s| s.group == group) {
            s.trainable = trainable;
        }
    }

    /// Euclidean norm of all gradients taken together.
    pub fn grad_norm(&self) -> f64 {
        self.slots.iter().map(|s| s.grad.sum_sq()).sum::<f64>().sqrt()
    }

    /// Same parameters in another precision; gradients reset to zero.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for s in &self.slots {
            let mut slot = ParamSlot::new(s.name.clone(), s.value.cast(), s.group);
            slot.trainable = s.trainable;
            out.by_name.insert(s.name.clone(), out.slots.len());
            out.slots.push(slot);
        }
        out
    }
}
