use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Named learnable tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<F> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
    index: BTreeMap<String, usize>,
}

impl<F: Real> Default for ParamSet<F> {
    fn default() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
            index: BTreeMap::new(),
        }
    }
}

impl<F: Real> ParamSet<F> {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor<F>) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter `{name}`")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        Ok(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.position(name).map(|i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<G: Real>(&self) -> ParamSet<G> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }
}

/// Shape table entry used while constructing a parameter set.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Half-width of the uniform initialisation; 0 for zero init.
    pub bound: f64,
}

/// Draws every tensor from one seeded stream in table order.
pub(crate) fn init_params<F: Real>(specs: &[ParamSpec], seed: u64) -> Result<ParamSet<F>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = ParamSet::default();
    for spec in specs {
        let n: usize = spec.shape.iter().product();
        let data = (0..n)
            .map(|_| {
                if spec.bound == 0.0 {
                    F::zero()
                } else {
                    F::of(rng.random_range(-spec.bound..spec.bound))
                }
            })
            .collect();
        set.push(spec.name.clone(), Tensor::new(spec.shape.clone(), data)?)?;
    }
    Ok(set)
}
