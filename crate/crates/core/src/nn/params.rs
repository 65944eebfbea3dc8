use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.tensors.iter_mut()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Replaces every tensor with the same-named tensor of `named`, which
    /// must hold exactly this store's names and shapes.
    pub fn load_named(&mut self, named: &[(String, Tensor<T>)]) -> Result<()> {
        if named.len() != self.tensors.len() {
            return Err(Error::Incompatible(format!(
                "{} tensors supplied for {} parameters",
                named.len(),
                self.tensors.len()
            )));
        }
        for (name, t) in named {
            let idx = self
                .names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Incompatible(format!("unexpected tensor `{name}`")))?;
            if self.tensors[idx].shape() != t.shape() {
                return Err(Error::Incompatible(format!(
                    "`{name}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    self.tensors[idx].shape()
                )));
            }
            self.tensors[idx] = t.clone();
        }
        Ok(())
    }

    pub fn to_named(&self) -> Vec<(String, Tensor<T>)> {
        self.names.iter().cloned().zip(self.tensors.iter().cloned()).collect()
    }
}

/// Draws initial parameter values into a store.
pub struct Initializer<'a, T: Element> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut ChaCha8Rng,
}

impl<T: Element> Initializer<'_, T> {
    /// Uniform in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn fan_in(&mut self, name: String, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..shape.iter().product::<usize>())
            .map(|_| T::from_f64(self.rng.gen_range(-bound..bound)))
            .collect();
        self.store.add(name, Tensor::new(shape, data).expect("sized by shape"))
    }

    pub fn normal(&mut self, name: String, shape: &[usize], std: f64) -> ParamId {
        let dist = Normal::new(0.0, std).expect("positive std");
        let data = (0..shape.iter().product::<usize>())
            .map(|_| T::from_f64(dist.sample(self.rng)))
            .collect();
        self.store.add(name, Tensor::new(shape, data).expect("sized by shape"))
    }

    /// Normal with the given std, resampled until inside `±2 std`.
    pub fn truncated_normal(&mut self, name: String, shape: &[usize], std: f64) -> ParamId {
        let dist = Normal::new(0.0, std).expect("positive std");
        let data = (0..shape.iter().product::<usize>())
            .map(|_| loop {
                let v = dist.sample(self.rng);
                if v.abs() <= 2.0 * std {
                    break T::from_f64(v);
                }
            })
            .collect();
        self.store.add(name, Tensor::new(shape, data).expect("sized by shape"))
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f64) -> ParamId {
        self.store.add(name, Tensor::full(shape, T::from_f64(value)))
    }
}

/// One forward pass: a graph with the parameters bound as leaves, plus the
/// dropout stream when training.
pub struct Session<T: Element = f32> {
    pub graph: Graph<T>,
    params: Vec<Var>,
    dropout_rng: Option<ChaCha8Rng>,
}

impl<T: Element> Session<T> {
    /// Binds `store` to a fresh graph. Parameters are tracked for gradients
    /// only when `dropout_rng` is given (training mode).
    pub fn new(store: &ParamStore<T>, dropout_rng: Option<ChaCha8Rng>) -> Self {
        Self::with_tracking(store, dropout_rng.is_some(), dropout_rng)
    }

    /// Inference-mode forward (no dropout) that still tracks gradients.
    pub fn tracked_inference(store: &ParamStore<T>) -> Self {
        Self::with_tracking(store, true, None)
    }

    fn with_tracking(store: &ParamStore<T>, track: bool, dropout_rng: Option<ChaCha8Rng>) -> Self {
        let mut graph = Graph::new();
        let params = store
            .tensors
            .iter()
            .map(|t| {
                if track {
                    graph.param(t.clone())
                } else {
                    graph.constant(t.clone())
                }
            })
            .collect();
        Self {
            graph,
            params,
            dropout_rng,
        }
    }

    /// Wraps an existing graph whose leaves `params` mirror a store.
    pub fn from_parts(graph: Graph<T>, params: Vec<Var>) -> Self {
        Self {
            graph,
            params,
            dropout_rng: None,
        }
    }

    pub fn p(&self, id: ParamId) -> Var {
        self.params[id.0]
    }

    pub fn training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    /// Inverted dropout; identity outside training or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::contract(format!("dropout rate {rate} outside [0, 1)")));
        }
        let Some(rng) = self.dropout_rng.as_mut() else {
            return Ok(x);
        };
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64(1.0 / (1.0 - rate));
        let mask = (0..self.graph.value(x).numel())
            .map(|_| if rng.gen::<f64>() < rate { T::ZERO } else { keep })
            .collect();
        self.graph.mask_mul(x, mask)
    }
}
