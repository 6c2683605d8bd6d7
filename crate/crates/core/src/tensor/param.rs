use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::array::{Shape, Tensor};
use super::graph::{Gradients, Graph, Var};

/// Named tensor owned by a network.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Whether an entry is optimized or is a non-trainable buffer such as a
/// batch-norm running statistic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Trainable,
    Buffer,
}

/// Ordered, uniquely named collection of parameters and buffers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<Parameter<T>>,
    roles: Vec<Role>,
    index: HashMap<String, usize>,
}

/// Handles of a store's entries inside one [`Graph`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

/// Index of an entry inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            roles: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(
        &mut self,
        name: impl Into<String>,
        tensor: Tensor<T>,
        role: Role,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(Parameter { name, tensor });
        self.roles.push(role);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.entries[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub(crate) fn entry_mut(&mut self, i: usize) -> (&mut Tensor<T>, Role) {
        (&mut self.entries[i].tensor, self.roles[i])
    }

    pub fn role(&self, id: ParamId) -> Role {
        self.roles[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| &self.entries[id.0].tensor)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>, Role)> {
        self.entries
            .iter()
            .zip(&self.roles)
            .enumerate()
            .map(|(i, (p, &r))| (ParamId(i), p, r))
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.iter()
            .filter(|(_, _, r)| *r == Role::Trainable)
            .map(|(_, p, _)| p.tensor.len())
            .sum()
    }

    /// Inserts every entry into `graph`; trainable entries become
    /// differentiable when `trainable` is set.
    pub fn bind(&self, graph: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .iter()
            .map(|(_, p, role)| {
                if trainable && role == Role::Trainable {
                    graph.variable(p.tensor.clone())
                } else {
                    graph.constant(p.tensor.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Gradients of every trainable entry, in store order.
    pub fn collect_grads(&self, bound: &Bound, grads: &Gradients<T>) -> Vec<Option<Vec<T>>> {
        self.iter()
            .map(|(id, _, role)| match role {
                Role::Trainable => grads.get(bound.var(id)).map(<[T]>::to_vec),
                Role::Buffer => None,
            })
            .collect()
    }

    /// Replaces the tensor of `name`, keeping shape.
    pub fn set(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Integrity(name.to_string()))?;
        let slot = &mut self.entries[id.0].tensor;
        if slot.shape() != tensor.shape() {
            return Err(Error::Shape(format!(
                "parameter `{name}` is {} but replacement is {}",
                slot.shape(),
                tensor.shape()
            )));
        }
        *slot = tensor;
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                })
                .collect(),
            roles: self.roles.clone(),
            index: self.index.clone(),
        }
    }
}

/// Zero-mean Gaussian tensor.
pub fn gaussian<T: Scalar, R: Rng + ?Sized>(
    shape: Shape,
    mean: f64,
    std: f64,
    rng: &mut R,
) -> Tensor<T> {
    let dist = Normal::new(mean, std).expect("finite positive standard deviation");
    Tensor::from_fn(shape, |_| T::c(dist.sample(rng)))
}
