//! Named parameter tensors and their binding onto a computation graph.
//!
//! Parameter names are dotted paths; the segment before the first dot is the
//! parameter *group* (`gat.w` belongs to group `gat`). Groups are the unit of
//! weight transfer between training stages.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use ndarray::IxDyn;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn groups(&self) -> BTreeSet<String> {
        self.tensors.keys().map(|k| group_of(k).to_string()).collect()
    }

    /// All tensors of one group, keyed by full name.
    pub fn group(&self, group: &str) -> BTreeMap<String, Tensor> {
        self.tensors
            .iter()
            .filter(|(k, _)| group_of(k) == group)
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Copies every tensor of `other` into `self`, replacing same-named entries.
    pub fn extend_from(&mut self, other: &ParamStore) {
        for (k, v) in other.iter() {
            self.tensors.insert(k.clone(), v.clone());
        }
    }

    /// Keeps only the listed groups.
    pub fn retain_groups(&mut self, groups: &[&str]) {
        self.tensors.retain(|k, _| groups.contains(&group_of(k)));
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

pub fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// A [`ParamStore`] registered on a [`Graph`]; leaves are created on first use.
pub struct Bound<'g, 's> {
    graph: &'g Graph,
    store: &'s ParamStore,
    leaves: RefCell<HashMap<String, Var<'g>>>,
}

impl<'g, 's> Bound<'g, 's> {
    pub fn new(graph: &'g Graph, store: &'s ParamStore) -> Self {
        Self {
            graph,
            store,
            leaves: RefCell::new(HashMap::new()),
        }
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    /// Leaf for parameter `name`.
    ///
    /// Panics when the parameter does not exist; model code only asks for
    /// names its own initializer created.
    pub fn param(&self, name: &str) -> Var<'g> {
        if let Some(v) = self.leaves.borrow().get(name) {
            return *v;
        }
        let value = self
            .store
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not initialized"))
            .clone();
        let var = self.graph.leaf(value);
        self.leaves.borrow_mut().insert(name.to_string(), var);
        var
    }

    /// Gradient for every stored parameter (zeros for parameters not reached).
    pub fn gradients(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        let leaves = self.leaves.borrow();
        self.store
            .iter()
            .map(|(name, value)| {
                let g = match leaves.get(name).and_then(|v| grads.get(*v)) {
                    Some(g) => g.clone(),
                    None => Tensor::zeros(value.raw_dim()),
                };
                (name.clone(), g)
            })
            .collect()
    }
}

/// Weight-initialization helpers shared by the model code.
pub mod init {
    use super::*;

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::zeros(IxDyn(shape))
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::ones(IxDyn(shape))
    }

    /// Uniform in `±1/sqrt(fan_in)`, the usual default for linear layers.
    pub fn linear<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Tensor::from_shape_simple_fn(IxDyn(&[fan_in, fan_out]), || {
            rng.random_range(-bound..bound)
        })
    }

    /// Glorot-uniform initialization.
    pub fn xavier<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Tensor::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-bound..bound))
    }

    pub fn normal<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
        Tensor::from_shape_simple_fn(IxDyn(shape), || {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
    }
}

/// Decoupled-weight-decay Adam settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// AdamW state for one [`ParamStore`].
pub struct AdamW {
    cfg: OptimizerConfig,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
    no_decay: BTreeSet<String>,
}

impl AdamW {
    pub fn new(cfg: OptimizerConfig) -> Self {
        Self {
            cfg,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
            no_decay: BTreeSet::new(),
        }
    }

    /// Excludes a parameter from weight decay.
    pub fn without_decay(mut self, name: impl Into<String>) -> Self {
        self.no_decay.insert(name.into());
        self
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) {
        self.step += 1;
        let c = &self.cfg;
        let bias1 = 1.0 - c.beta1.powi(self.step as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step as i32);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.raw_dim()));
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.raw_dim()));
            let decay = if self.no_decay.contains(name) {
                0.0
            } else {
                c.learning_rate * c.weight_decay
            };
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *p *= 1.0 - decay;
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    let mhat = *m / bias1;
                    let vhat = *v / bias2;
                    *p -= c.learning_rate * mhat / (vhat.sqrt() + c.eps);
                });
        }
    }
}
