//! Dense tensors and named parameter collections.
//!
//! Everything learnable in the model lives in a [`TensorMap`]; forward and
//! backward passes run on a [`super::Tape`] that copies tensor values in as
//! leaves and hands gradients back out by parameter name.

use indexmap::IndexMap;
use rand::Rng;

use super::KernelError;

/// A dense row-major tensor of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Build a tensor from a shape and flat row-major data.
    ///
    /// Panics if the element count does not match the shape.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor shape {:?} wants {} values, got {}",
            shape,
            numel,
            data.len()
        );
        Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor::from_vec(shape, vec![0.0; numel])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::from_vec(vec![], vec![value])
    }

    /// Glorot-style uniform init over `[rows, cols]` with range
    /// `sqrt(6 / (rows + cols))`.
    pub fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Tensor::from_vec(vec![rows, cols], data)
    }

    /// Uniform init in `[lo, hi)` over an arbitrary shape.
    pub fn uniform<R: Rng>(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.random_range(lo..hi)).collect();
        Tensor::from_vec(shape, data)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Add `delta` into the gradient accumulator, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        assert_eq!(
            delta.len(),
            self.data.len(),
            "gradient length {} does not match tensor of {} values",
            delta.len(),
            self.data.len()
        );
        let grad = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

/// Named tensors in deterministic insertion order.
#[derive(Debug, Clone, Default)]
pub struct TensorMap {
    map: IndexMap<String, Tensor>,
}

impl TensorMap {
    pub fn new() -> Self {
        TensorMap::default()
    }

    /// Insert a tensor under a unique name. Panics on duplicates; parameter
    /// names are a static contract, not runtime data.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        let prev = self.map.insert(name.clone(), tensor);
        assert!(prev.is_none(), "duplicate tensor name `{name}`");
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.map.get_mut(name)
    }

    /// Fetch a tensor that the caller knows must exist.
    pub fn expect(&self, name: &str) -> &Tensor {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("missing tensor `{name}`"))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.iter_mut() {
            t.zero_grad();
        }
    }

    /// Accumulate a named gradient, checking the shape against the parameter.
    pub fn accumulate(&mut self, name: &str, grad: &[f64]) -> Result<(), KernelError> {
        let tensor = self
            .map
            .get_mut(name)
            .ok_or_else(|| KernelError::UnknownParameter(name.to_string()))?;
        if tensor.numel() != grad.len() {
            return Err(KernelError::GradientShape {
                name: name.to_string(),
                expected: tensor.numel(),
                got: grad.len(),
            });
        }
        tensor.accumulate_grad(grad);
        Ok(())
    }
}
