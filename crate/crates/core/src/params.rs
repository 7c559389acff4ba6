//! Named trainable parameters.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Option<Vec<F>>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<F> {
    params: Vec<Parameter<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Parameter {
            name,
            value,
            grad: None,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<F> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].value
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

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<F>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<F>> {
        self.params.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Replaces the value of `name`, keeping its shape.
    pub fn set(&mut self, name: &str, data: Vec<F>) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))?;
        let p = &mut self.params[id.0];
        p.value = Tensor::new(p.value.shape().to_vec(), data)?;
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: None,
                })
                .collect(),
        }
    }
}

/// Weight matrix `[fan_in, fan_out]` drawn uniformly from `±1/sqrt(fan_in)`.
pub fn fan_in_uniform<F: Real, R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor<F> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| F::of(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("consistent shape")
}

/// Uniform vector in `±1/sqrt(len)`, used for attention context vectors.
pub fn uniform_vector<F: Real, R: Rng>(rng: &mut R, len: usize) -> Tensor<F> {
    let bound = 1.0 / (len as f64).sqrt();
    Tensor::vector((0..len).map(|_| F::of(rng.gen_range(-bound..bound))).collect())
}
