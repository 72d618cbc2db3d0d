use std::collections::HashMap;

use rand::Rng;

use super::tensor::Tensor;
use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named trainable tensors with accumulated gradients.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId, NnError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(NnError::Data(format!("duplicate parameter {name:?}")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            grad: Tensor::zeros_like(&value),
            value,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.id(name).map(|id| &mut self.params[id.0])
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn accumulate(&mut self, grads: &Gradients) {
        for (p, g) in self.params.iter_mut().zip(&grads.by_param) {
            if let Some(g) = g {
                p.grad.add_assign(g);
            }
        }
    }

    /// Replaces every value from `named`, which must match this store's
    /// names and shapes exactly.
    pub fn assign_from(&mut self, named: Vec<(String, Tensor)>) -> Result<(), NnError> {
        let mut problems = Vec::new();
        let mut seen = vec![false; self.params.len()];
        let mut updates = Vec::new();
        for (name, value) in named {
            match self.id(&name) {
                None => problems.push(format!("{name}: not in model")),
                Some(id) => {
                    let expected = self.params[id.0].value.shape().to_vec();
                    if expected != value.shape() {
                        problems.push(format!(
                            "{name}: checkpoint {:?} vs model {expected:?}",
                            value.shape()
                        ));
                    } else {
                        seen[id.0] = true;
                        updates.push((id, value));
                    }
                }
            }
        }
        for (i, s) in seen.iter().enumerate() {
            if !*s && !problems.iter().any(|p| p.starts_with(&format!("{}:", self.params[i].name))) {
                problems.push(format!("{}: missing from checkpoint", self.params[i].name));
            }
        }
        if !problems.is_empty() {
            return Err(NnError::Architecture(problems));
        }
        for (id, value) in updates {
            self.params[id.0].value = value;
        }
        Ok(())
    }

    pub fn named_values(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect()
    }
}

/// Gradients from one backward pass, indexed like the parameter store.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub by_param: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(id.0).and_then(Option::as_ref)
    }

    /// Adds `other` into `self`.
    pub fn merge(&mut self, other: Gradients) {
        if self.by_param.len() < other.by_param.len() {
            self.by_param.resize(other.by_param.len(), None);
        }
        for (mine, theirs) in self.by_param.iter_mut().zip(other.by_param) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => m.add_assign(&t),
                (None, Some(t)) => *mine = Some(t),
                _ => {}
            }
        }
    }
}

/// Glorot-uniform initialization for a `rows × cols` weight.
pub fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches")
}

/// Unit-variance uniform initialization for lookup tables.
pub fn unit_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    uniform(rows, cols, 3f64.sqrt(), rng)
}

pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches")
}
