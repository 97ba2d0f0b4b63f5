//! Named trainable parameters and their per-step lease onto a graph.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Gradients, Graph, Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

/// Learning-rate group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// The convolutional feature extractor.
    Visual,
    /// Everything else.
    Other,
}

/// Index of a parameter within its store; stable for the store's lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub has_grad: bool,
    pub group: ParamGroup,
}

/// Ordered collection of named parameters. Registration order is fixed, which
/// makes initialization, optimizer sweeps and checkpoints deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        value: Vec<f64>,
        group: ParamGroup,
    ) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(TensorError::DuplicateParam { name: name.into() });
        }
        let numel: usize = shape.iter().product();
        if numel != value.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                len: value.len(),
            });
        }
        let id = self.params.len();
        self.by_name.insert(name.to_string(), id);
        self.params.push(Parameter {
            name: name.to_string(),
            shape,
            grad: vec![0.0; value.len()],
            has_grad: false,
            value,
            group,
        });
        Ok(ParamId(id))
    }

    /// Xavier-uniform matrix `[rows, cols]`.
    pub fn register_xavier(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut ChaCha8Rng,
        group: ParamGroup,
    ) -> Result<ParamId> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let value = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.register(name, vec![rows, cols], value, group)
    }

    /// Gaussian-initialized matrix with the given standard deviation.
    pub fn register_gaussian(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        std: f64,
        rng: &mut ChaCha8Rng,
        group: ParamGroup,
    ) -> Result<ParamId> {
        let normal = Normal::new(0.0, std).expect("std must be positive");
        let numel: usize = shape.iter().product();
        let value = (0..numel).map(|_| normal.sample(rng)).collect();
        self.register(name, shape, value, group)
    }

    pub fn register_zeros(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        group: ParamGroup,
    ) -> Result<ParamId> {
        let numel = shape.iter().product();
        self.register(name, shape, vec![0.0; numel], group)
    }

    pub fn register_const(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        fill: f64,
        group: ParamGroup,
    ) -> Result<ParamId> {
        let numel = shape.iter().product();
        self.register(name, shape, vec![fill; numel], group)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    /// Ids of all parameters in `group`; with its complement this partitions
    /// the store.
    pub fn group_ids(&self, group: ParamGroup) -> Vec<ParamId> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.group == group)
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    /// Leases every parameter onto `graph` as a leaf, one node per parameter.
    pub fn bind(&self, graph: &mut Graph) -> BoundParams {
        let tensors = self
            .params
            .iter()
            .map(|p| {
                let t = Tensor::new(p.shape.clone(), p.value.clone())
                    .expect("stored parameters are valid tensors");
                graph.leaf(&t)
            })
            .collect();
        BoundParams { tensors }
    }

    /// Copies the gradients of a backward pass into the store. Parameters the
    /// loss never reached receive a zero gradient.
    pub fn absorb_grads(&mut self, bound: &BoundParams, grads: &Gradients) -> Result<()> {
        if bound.tensors.len() != self.params.len() {
            return Err(TensorError::BindMismatch {
                bound: bound.tensors.len(),
                store: self.params.len(),
            });
        }
        for (param, tensor) in self.params.iter_mut().zip(&bound.tensors) {
            param.grad = grads.dense(tensor);
            param.has_grad = true;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
            p.has_grad = false;
        }
    }

    /// Snapshot of all values, aligned with registration order.
    pub fn values_snapshot(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore_snapshot(&mut self, snapshot: &[Vec<f64>]) -> Result<()> {
        if snapshot.len() != self.params.len() {
            return Err(TensorError::BindMismatch {
                bound: snapshot.len(),
                store: self.params.len(),
            });
        }
        for (p, v) in self.params.iter_mut().zip(snapshot) {
            p.value.copy_from_slice(v);
        }
        Ok(())
    }

    /// Overwrites values from `(name, shape, data)` triples, e.g. a loaded
    /// checkpoint. Every stored parameter must be present with its shape.
    pub fn load_values(&mut self, values: &BTreeMap<String, (Vec<usize>, Vec<f64>)>) -> Result<()> {
        for p in &mut self.params {
            let (shape, data) = values
                .get(&p.name)
                .ok_or_else(|| TensorError::MissingParam { name: p.name.clone() })?;
            if *shape != p.shape {
                return Err(TensorError::ParamShape {
                    name: p.name.clone(),
                    found: shape.clone(),
                    expected: p.shape.clone(),
                });
            }
            p.value.copy_from_slice(data);
        }
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    /// Overwrites one parameter's values (weight surgery for tests and
    /// tooling). The replacement must match the registered length.
    pub fn set_value(&mut self, name: &str, value: &[f64]) -> Result<()> {
        let idx = self
            .by_name
            .get(name)
            .copied()
            .ok_or_else(|| TensorError::MissingParam { name: name.into() })?;
        let p = &mut self.params[idx];
        if value.len() != p.value.len() {
            return Err(TensorError::ParamShape {
                name: name.into(),
                found: vec![value.len()],
                expected: p.shape.clone(),
            });
        }
        p.value.copy_from_slice(value);
        Ok(())
    }
}

/// One training step's view of the store: parameter tensors registered as
/// leaves on the step's graph, aligned with store order.
pub struct BoundParams {
    tensors: Vec<Tensor>,
}

impl BoundParams {
    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }
}
