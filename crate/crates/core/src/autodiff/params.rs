use std::collections::HashMap;

use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

/// Optimizer group a parameter belongs to; groups may use distinct learning rates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Encoder,
    Head,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor<F>,
}

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
    index: HashMap<String, usize>,
}

impl<F: Element> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Element> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor<F>) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, group, value });
        self.params.len() - 1
    }

    /// Glorot-uniform initialized matrix.
    pub fn insert_glorot<R: Rng>(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> usize {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        self.insert_uniform(name, group, &[rows, cols], limit, rng)
    }

    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        shape: &[usize],
        limit: f64,
        rng: &mut R,
    ) -> usize {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| F::of(rng.gen_range(-limit..limit))).collect();
        self.insert(
            name,
            group,
            Tensor::new(shape.to_vec(), data).expect("shape matches data"),
        )
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::config(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        Ok(&self.params[self.id(name)?].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<F>> {
        let id = self.id(name)?;
        Ok(&mut self.params[id].value)
    }

    pub fn params(&self) -> &[Param<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<F>] {
        &mut self.params
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<F>> {
        self.params.iter()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Copies every parameter into `g` as a leaf.
    pub fn bind(&self, g: &mut Graph<F>, requires_grad: bool) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| g.leaf(p.value.clone(), requires_grad))
                .collect(),
        }
    }
}

/// Graph handles for the parameters of one [`ParamStore`], in store order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps handles created by the caller, one per store parameter in order.
    pub fn from_vars<F: Element>(store: &ParamStore<F>, vars: Vec<Var>) -> Result<Self> {
        if vars.len() != store.len() {
            return Err(Error::Usage(format!(
                "{} handles for {} parameters",
                vars.len(),
                store.len()
            )));
        }
        Ok(Bound { vars })
    }

    pub fn var<F: Element>(&self, store: &ParamStore<F>, name: &str) -> Result<Var> {
        Ok(self.vars[store.id(name)?])
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Per-parameter gradients after a backward pass; `None` where no gradient reached.
    pub fn grads<F: Element>(&self, g: &Graph<F>) -> Vec<Option<Vec<F>>> {
        self.vars.iter().map(|&v| g.grad(v).map(<[F]>::to_vec)).collect()
    }
}
