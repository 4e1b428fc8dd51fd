use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{Gradients, Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: IndexMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        self.entries.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.entries.values().map(Tensor::sum_squares).sum()
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape().to_vec())))
                .collect(),
        }
    }

    /// Fails unless `other` has the same names, order and shapes.
    pub fn check_same_structure(&self, other: &ParamSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::StructureMismatch(format!(
                "{} vs {} parameters",
                self.len(),
                other.len()
            )));
        }
        for ((na, ta), (nb, tb)) in self.iter().zip(other.iter()) {
            if na != nb || ta.shape() != tb.shape() {
                return Err(Error::StructureMismatch(format!(
                    "{na} {:?} vs {nb} {:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        Ok(())
    }

    /// Elementwise `self += c * other`.
    pub fn add_scaled(&mut self, other: &ParamSet, c: f64) -> Result<()> {
        self.check_same_structure(other)?;
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(other.iter()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += c * y;
            }
        }
        Ok(())
    }

    /// Rounds every value to the nearest `f32`, so files hold them exactly.
    pub fn round_to_f32(&mut self) {
        for t in self.entries.values_mut() {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Places every parameter on `g` as a leaf.
    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> BoundParams {
        BoundParams {
            vars: self
                .entries
                .iter()
                .map(|(k, t)| (k.clone(), g.leaf(t.clone(), requires_grad)))
                .collect(),
        }
    }
}

/// Graph handles for a bound [`ParamSet`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn has(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    /// Collects gradient values in parameter order; missing gradients are zero.
    pub fn gradients(&self, g: &Graph, grads: &Gradients) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, &v) in &self.vars {
            let t = match grads.get(v) {
                Some(gv) => g.value(gv).clone(),
                None => Tensor::zeros(g.value(v).shape().to_vec()),
            };
            out.entries.insert(name.clone(), t);
        }
        out
    }
}

/// Weight shape declaration used by the network builders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub is_bias: bool,
}

/// He-normal weights (std `√(2/fan_in)`), zero biases, rounded to `f32`.
pub fn init_params<R: Rng>(decls: &[ParamDecl], rng: &mut R) -> Result<ParamSet> {
    let mut ps = ParamSet::new();
    for d in decls {
        let n: usize = d.shape.iter().product();
        let data = if d.is_bias {
            vec![0.0; n]
        } else {
            let normal = Normal::new(0.0, (2.0 / d.fan_in as f64).sqrt())
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            (0..n).map(|_| normal.sample(rng) as f32 as f64).collect()
        };
        ps.insert(d.name.clone(), Tensor::new(d.shape.clone(), data)?)?;
    }
    Ok(ps)
}

/// Per-parameter `(1−α)·a + α·b`; endpoints return the sources exactly.
pub fn interpolate_weights(a: &ParamSet, b: &ParamSet, alpha: f64) -> Result<ParamSet> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    a.check_same_structure(b)?;
    if alpha == 0.0 {
        return Ok(a.clone());
    }
    if alpha == 1.0 {
        return Ok(b.clone());
    }
    let mut out = a.clone();
    for ((_, o), (_, tb)) in out.entries.iter_mut().zip(b.iter()) {
        for (x, y) in o.data_mut().iter_mut().zip(tb.data()) {
            *x = (1.0 - alpha) * *x + alpha * y;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Parameters are kept `f32`-representable.
pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    params.check_same_structure(grads)?;
    params.check_same_structure(&state.m)?;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((((_, p), (_, g)), (_, m)), (_, v)) in params
        .entries
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.entries.iter_mut())
        .zip(state.v.entries.iter_mut())
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            let mhat = *mv / bc1;
            let vhat = *vv / bc2;
            *pv = (*pv - cfg.lr * mhat / (vhat.sqrt() + cfg.eps)) as f32 as f64;
        }
    }
    Ok(())
}
