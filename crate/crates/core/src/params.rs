//! Named parameter storage and the Adam optimizer.
//!
//! A [`ParamSet`] keeps every trainable tensor next to a same-shape gradient
//! buffer under a unique name. [`AdamState`] carries per-parameter moment
//! estimates aligned with the set's insertion order, so one optimizer step
//! walks both in lockstep.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One trainable tensor plus its gradient buffer.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Self { value, grad }
    }
}

/// Stable handle into a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Param>,
    names: Vec<String>,
    by_name: BTreeMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Shape(format!("duplicate parameter name {name:?}")));
        }
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.params.push(Param::new(value));
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].grad
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Accumulates `delta` into the named gradient buffer.
    pub fn add_grad(&mut self, id: ParamId, delta: &Tensor) {
        let grad = &mut self.params[id.0].grad;
        debug_assert_eq!(grad.shape(), delta.shape());
        for (g, d) in grad.data_mut().iter_mut().zip(delta.data()) {
            *g += d;
        }
    }
}

/// Adam optimizer state: first/second moments per parameter plus a shared
/// step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    fn ensure(&mut self, params: &ParamSet) {
        while self.m.len() < params.len() {
            let shape = params.params[self.m.len()].value.shape().to_vec();
            self.m.push(Tensor::zeros(shape.clone()));
            self.v.push(Tensor::zeros(shape));
        }
    }
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(0.001)
    }
}

/// One Adam update over every parameter in the set; gradients are zeroed
/// afterward.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState) {
    state.ensure(params);
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    for (idx, p) in params.params.iter_mut().enumerate() {
        let m = state.m[idx].data_mut();
        let v = state.v[idx].data_mut();
        let g = p.grad.data();
        let x = p.value.data_mut();
        for i in 0..x.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            x[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
        p.grad.fill(0.0);
    }
}
