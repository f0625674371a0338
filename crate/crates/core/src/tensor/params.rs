use std::collections::HashMap;
use std::sync::Arc;

use super::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Arc<Tensor>>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(Arc::new(value));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter().map(|t| t.as_ref()))
    }

    /// Registers every parameter as a leaf on `tape`; indexed by `ParamId`.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.values
            .iter()
            .map(|t| tape.var_shared(Arc::clone(t)))
            .collect()
    }

    /// Collects per-parameter gradients, zero for parameters the objective ignores.
    pub fn collect_grads(&self, grads: &Gradients, vars: &[Var]) -> Vec<Tensor> {
        vars.iter().map(|&v| grads.wrt(v)).collect()
    }

    /// Copies values from `other` by name; every parameter must be present with the same shape.
    pub fn load_from(&mut self, other: &[(String, Tensor)]) -> Result<()> {
        let given: HashMap<&str, &Tensor> = other.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for i in 0..self.values.len() {
            let name = &self.names[i];
            let Some(src) = given.get(name.as_str()) else {
                return Err(Error::invalid(format!("checkpoint lacks parameter {name}")));
            };
            if src.shape() != self.values[i].shape() {
                return Err(Error::shape(
                    "load_from",
                    self.values[i].shape(),
                    src.shape(),
                ));
            }
            self.values[i] = Arc::new((*src).clone());
        }
        Ok(())
    }

    pub fn to_named(&self) -> Vec<(String, Tensor)> {
        self.iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect()
    }
}
