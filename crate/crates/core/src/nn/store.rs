use std::collections::HashMap;

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Handle to an entry of a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntryKind {
    /// Updated by the optimizer.
    Trainable,
    /// Non-gradient state such as batch-norm running statistics.
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Entry {
    pub name: String,
    pub kind: EntryKind,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub m: Tensor,
    pub v: Tensor,
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Gradients of one backward pass, indexed by parameter.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub(crate) grads: HashMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    /// Adds `other` into `self`; used to combine gradients from several graphs.
    pub fn accumulate(&mut self, other: Gradients) {
        for (id, g) in other.grads {
            match self.grads.get_mut(&id) {
                Some(acc) => acc.add_assign(&g),
                None => {
                    self.grads.insert(id, g);
                }
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.grads.values_mut() {
            for x in g.as_mut_slice() {
                *x *= c;
            }
        }
    }
}

/// Flat, named collection of real tensors with gradient slots and Adam moments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    pub(crate) entries: Vec<Entry>,
    index: HashMap<String, usize>,
    pub(crate) step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, value: Tensor, kind: EntryKind) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name `{name}`")));
        }
        let (r, c) = value.shape();
        let id = self.entries.len();
        self.entries.push(Entry {
            name: name.to_string(),
            kind,
            value,
            grad: None,
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
        });
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn add_param(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        self.insert(name, value, EntryKind::Trainable)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        self.insert(name, value, EntryKind::Buffer)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn kind(&self, id: ParamId) -> EntryKind {
        self.entries[id.0].kind
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor> {
        self.entries[id.0].grad.as_ref()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|&id| self.kind(id) == EntryKind::Trainable)
    }

    /// Total count of trainable scalars.
    pub fn trainable_size(&self) -> usize {
        self.trainable_ids().map(|id| self.value(id).len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    /// Installs the gradients of a backward pass; parameters the loss did not
    /// touch receive zeros.
    pub fn set_gradients(&mut self, grads: &Gradients) {
        for (i, e) in self.entries.iter_mut().enumerate() {
            if e.kind != EntryKind::Trainable {
                continue;
            }
            e.grad = Some(match grads.get(ParamId(i)) {
                Some(g) => g.clone(),
                None => Tensor::zeros(e.value.rows(), e.value.cols()),
            });
        }
    }

    /// One bias-corrected Adam update of every trainable tensor.
    pub fn adam_step(&mut self, opt: &Adam) -> Result<()> {
        if let Some(e) = self
            .entries
            .iter()
            .find(|e| e.kind == EntryKind::Trainable && e.grad.is_none())
        {
            return Err(Error::InvalidArgument(format!("missing gradients for `{}`", e.name)));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - opt.beta1.powi(t);
        let c2 = 1.0 - opt.beta2.powi(t);
        for e in self.entries.iter_mut().filter(|e| e.kind == EntryKind::Trainable) {
            let g = e.grad.take().expect("checked above");
            let value = e.value.as_mut_slice();
            let m = e.m.as_mut_slice();
            let v = e.v.as_mut_slice();
            for (k, &gk) in g.as_slice().iter().enumerate() {
                m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * gk;
                v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * gk * gk;
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                value[k] -= opt.lr * mhat / (vhat.sqrt() + opt.eps);
            }
        }
        Ok(())
    }

    /// True when every value, moment and the step counter agree bit for bit.
    pub fn bit_identical(&self, other: &ParameterStore) -> bool {
        let same = |a: &Tensor, b: &Tensor| {
            a.shape() == b.shape() && a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits())
        };
        self.step == other.step
            && self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name && a.kind == b.kind && same(&a.value, &b.value) && same(&a.m, &b.m) && same(&a.v, &b.v)
            })
    }

    /// Copies values (not moments) of every entry from `other`, which must
    /// share names and shapes.
    pub fn copy_values_from(&mut self, other: &ParameterStore) -> Result<()> {
        for e in &mut self.entries {
            let src = other
                .id(&e.name)
                .ok_or_else(|| Error::CheckpointMismatch(format!("missing `{}`", e.name)))?;
            let v = other.value(src);
            if v.shape() != e.value.shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "`{}` has shape {:?}, expected {:?}",
                    e.name,
                    v.shape(),
                    e.value.shape()
                )));
            }
            e.value = v.clone();
        }
        Ok(())
    }
}
