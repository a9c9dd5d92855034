//! Named trainable parameters, kept outside any tape.

use super::{Scalar, Tensor, TensorError};
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Param<T> {
    name: String,
    value: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor<T> {
        &mut self.value
    }
}

/// Weight initialization schemes.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Gaussian with std `sqrt(2 / fan_in)`.
    Kaiming { fan_in: usize },
    Zero,
}

/// Registry of named parameters; insertion order is the canonical order for
/// optimizers and checkpoints.
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId, TensorError> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(TensorError::InvalidArg {
                op: "param_store",
                msg: format!("duplicate parameter name '{name}'"),
            });
        }
        self.params.push(Param { name, value });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn add_init(
        &mut self,
        name: impl Into<String>,
        shape: impl Into<Vec<usize>>,
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<ParamId, TensorError> {
        let shape = shape.into();
        let value = match init {
            Init::Zero => Tensor::zeros(shape),
            Init::Kaiming { fan_in } => {
                let std = (2.0 / fan_in as f64).sqrt();
                let dist = Normal::new(0.0, std).expect("positive std");
                Tensor::from_fn(shape, |_| T::from_f64(dist.sample(rng)))
            }
        };
        self.add(name, value)
    }

    pub fn get(&self, id: ParamId) -> Result<&Param<T>, TensorError> {
        self.params.get(id.0).ok_or(TensorError::UnknownParam)
    }

    pub fn get_mut(&mut self, id: ParamId) -> Result<&mut Param<T>, TensorError> {
        self.params.get_mut(id.0).ok_or(TensorError::UnknownParam)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}
