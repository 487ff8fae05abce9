//! Named trainable tensors and the optimizer that updates them.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of trainable tensors with gradient slots.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Tensor>,
}

/// Tape handles for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct BoundParams(Vec<Var>);

impl BoundParams {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable tensor. Names must be unique.
    pub fn add(&mut self, name: &str, tensor: Tensor) -> ParamId {
        let (idx, prev) = self
            .params
            .insert_full(name.to_string(), tensor.with_requires_grad(true));
        assert!(prev.is_none(), "duplicate parameter name {name}");
        ParamId(idx)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.get_index_of(name).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Copies every parameter onto the tape as a tracked leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams(self.params.values().map(|t| tape.leaf(t.clone())).collect())
    }

    /// Adds the tape gradients of the bound leaves into each parameter's slot.
    pub fn accumulate_grads(&mut self, tape: &Tape, bound: &BoundParams) -> Result<()> {
        for (t, &v) in self.params.values_mut().zip(&bound.0) {
            if let Some(g) = tape.grad(v) {
                t.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for t in self.params.values_mut() {
            t.zero_grad();
        }
    }

    /// Overwrites values from another store with identical names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, t) in self.params.iter_mut() {
            let src = other
                .params
                .get(name)
                .ok_or_else(|| Error::Geometry(format!("missing parameter {name}")))?;
            if src.shape() != t.shape() {
                return Err(Error::shape("load parameter", t.shape(), src.shape()));
            }
            t.data_mut().copy_from_slice(src.data());
        }
        if other.len() != self.len() {
            return Err(Error::Geometry(format!(
                "parameter count {} does not match expected {}",
                other.len(),
                self.len()
            )));
        }
        Ok(())
    }

    /// Raw parameter values, for snapshotting.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params.values().map(|t| t.data().to_vec()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<f64>]) {
        for (t, s) in self.params.values_mut().zip(snapshot) {
            t.data_mut().copy_from_slice(s);
        }
    }
}

/// Adaptive moment estimation.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning-rate multipliers for parameters whose name starts with a prefix.
    pub scales: Vec<(String, f64)>,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            scales: Vec::new(),
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Multiplies the learning rate of every parameter named `prefix*` by `factor`.
    pub fn with_scale(mut self, prefix: &str, factor: f64) -> Self {
        self.scales.push((prefix.to_string(), factor));
        self
    }

    fn rate(&self, name: &str) -> f64 {
        self.scales
            .iter()
            .filter(|(p, _)| name.starts_with(p.as_str()))
            .fold(self.lr, |lr, (_, f)| lr * f)
    }

    /// Applies one update from the accumulated gradients, then clears them.
    /// Parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore) {
        if self.m.is_empty() {
            self.m = store
                .params
                .values()
                .map(|t| vec![0.0; t.numel()])
                .collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let rates: Vec<f64> = store.params.keys().map(|n| self.rate(n)).collect();
        for (((t, m), v), lr) in store
            .params
            .values_mut()
            .zip(&mut self.m)
            .zip(&mut self.v)
            .zip(rates)
        {
            let Some(g) = t.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let data = t.data_mut();
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                data[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
            t.zero_grad();
        }
    }
}
