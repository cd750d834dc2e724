use std::collections::BTreeMap;

use rand::Rng;

use super::tape::ParamGrad;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
    pub trainable: bool,
    pub(crate) adam_m: Vec<f64>,
    pub(crate) adam_v: Vec<f64>,
}

/// Named trainable tensors with gradient slots and optimizer state.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
    pub(crate) adam_t: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        let n = value.numel();
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            grad: vec![0.0; n],
            trainable: true,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
        });
        Ok(ParamId(id))
    }

    /// Registers a parameter drawn uniformly from `[-range, range]`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        range: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-range..=range)).collect();
        self.add(name, Tensor::new(shape, data)?)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Clears optimizer moments and the step counter.
    pub fn reset_optimizer(&mut self) {
        self.adam_t = 0;
        for p in &mut self.params {
            p.adam_m.iter_mut().for_each(|x| *x = 0.0);
            p.adam_v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Adds `scale * g` for every gradient slice, in order.
    pub fn accumulate_grads(&mut self, grads: &[ParamGrad], scale: f64) {
        for g in grads {
            let slot = &mut self.params[g.param.0].grad[g.offset..g.offset + g.values.len()];
            for (s, v) in slot.iter_mut().zip(&g.values) {
                *s += scale * v;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    /// Copies values from `other` for every parameter present in both stores.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<usize> {
        let mut copied = 0;
        for p in other.iter() {
            if let Some(&i) = self.index.get(&p.name) {
                let mine = &mut self.params[i];
                if mine.value.shape() != p.value.shape() {
                    return Err(Error::Shape {
                        op: "copy_values_from",
                        lhs: mine.value.shape().to_vec(),
                        rhs: p.value.shape().to_vec(),
                    });
                }
                mine.value = p.value.clone();
                copied += 1;
            }
        }
        Ok(copied)
    }
}
