use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Vec<f64>,
}

/// Every learnable tensor of a model, addressed by a stable name.
///
/// Iteration order is lexicographic by name, which keeps checkpoint layout
/// and optimizer traversal deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let grad = vec![0.0; value.numel()];
        self.params.insert(name.into(), Param { value, grad });
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.get(name).map(|p| &p.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.get_mut(name).map(|p| &mut p.value)
    }

    /// Replaces the value of an existing parameter; the shape must match.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self.get_mut(name)?;
        if p.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                name: name.to_string(),
                expected: p.value.shape().to_vec(),
                found: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn grad(&self, name: &str) -> Result<&[f64]> {
        self.get(name).map(|p| p.grad.as_slice())
    }

    pub fn grad_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        self.get_mut(name).map(|p| p.grad.as_mut_slice())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params.get(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params.get_mut(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    /// Global L2 norm over all gradient buffers.
    pub fn grad_norm(&self) -> f64 {
        self.params.values().flat_map(|p| p.grad.iter()).map(|g| g * g).sum::<f64>().sqrt()
    }
}

pub(crate) fn normal_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("positive std");
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = dist.sample(rng);
    }
    t
}

/// Glorot-uniform initialization over the given fan sizes.
pub(crate) fn glorot_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = dist.sample(rng);
    }
    t
}

impl ParamStore {
    /// Copies every value from `src`, which must hold exactly the same names
    /// and shapes.
    pub fn copy_values_from(&mut self, src: &ParamStore) -> Result<()> {
        for (name, p) in &mut self.params {
            let other = src.get(name)?;
            if other.value.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch {
                    name: name.clone(),
                    expected: p.value.shape().to_vec(),
                    found: other.value.shape().to_vec(),
                });
            }
        }
        if let Some(extra) = src.names().find(|n| !self.contains(n)) {
            return Err(Error::UnknownParameter(extra.to_string()));
        }
        for (name, p) in &mut self.params {
            p.value = src.params[name].value.clone();
        }
        Ok(())
    }
}
