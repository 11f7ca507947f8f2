//! Dense row-major tensors with reverse-mode gradients.
//!
//! Everything trains in `f32`; the same code instantiated at `f64` backs the
//! finite-difference gradient checks. There is no broadcasting except by
//! scalar constants, and shape mismatches are hard errors.

mod kernels;
mod tape;

pub use tape::{Padding, Tape, ValueId};

use std::sync::Arc;

use crate::error::{Error, Result};

/// Element type of a [`Tensor`]: `f32` for training and inference, `f64` for
/// gradient checking.
pub trait Scalar:
    num_traits::Float
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense n-dimensional array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E = f32> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Scalar> Tensor<E> {
    /// Build a tensor, checking that `product(shape) == data.len()` and that
    /// every extent is positive.
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape {
                op: "tensor",
                shape,
                reason: "zero extent".into(),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidShape {
                op: "tensor",
                shape,
                reason: format!("shape implies {numel} elements, data has {}", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![E::zero(); numel],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::filled(shape, E::one())
    }

    pub fn filled(shape: &[usize], v: E) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; numel],
        }
    }

    /// 0-d-like scalar, represented with shape `[1]`.
    pub fn scalar(v: E) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> E) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(|i| f(i)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<E> {
        if self.data.len() != 1 {
            return Err(Error::NotScalar {
                shape: self.shape.clone(),
            });
        }
        Ok(self.data[0])
    }

    /// Row-major element access by multi-index.
    pub fn at(&self, idx: &[usize]) -> E {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut flat = 0;
        for (i, &d) in idx.iter().zip(&self.shape) {
            debug_assert!(*i < d);
            flat = flat * d + i;
        }
        self.data[flat]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data, different shape (element count must match).
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn map<F: Scalar>(&self, f: impl Fn(E) -> F) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Convert precision, rounding through `f64`.
    pub fn cast<F: Scalar>(&self) -> Tensor<F> {
        self.map(|v| F::of(v.as_f64()))
    }

    /// Elementwise `self += other`, used for gradient accumulation.
    pub fn add_assign(&mut self, other: &Tensor<E>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "add_assign",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
        Ok(())
    }

    pub fn fill(&mut self, v: E) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

/// A named weight tensor with its gradient buffer and a freeze flag.
///
/// Frozen parameters (`trainable == false`) accumulate zero gradient and are
/// never touched by [`sgd_step`].
#[derive(Clone, Debug)]
pub struct Parameter<E = f32> {
    name: String,
    value: Arc<Tensor<E>>,
    grad: Tensor<E>,
    trainable: bool,
}

impl<E: Scalar> Parameter<E> {
    pub fn new(name: impl Into<String>, value: Tensor<E>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value: Arc::new(value),
            grad,
            trainable: true,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<E> {
        &self.value
    }

    /// Shared handle, used by the tape so leaves don't copy weight data.
    pub(crate) fn shared_value(&self) -> Arc<Tensor<E>> {
        Arc::clone(&self.value)
    }

    pub fn grad(&self) -> &Tensor<E> {
        &self.grad
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }

    /// Replace the stored value (used by checkpoint loading).
    pub fn set_value(&mut self, value: Tensor<E>) -> Result<()> {
        if value.shape() != self.value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_value",
                lhs: self.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        self.value = Arc::new(value);
        Ok(())
    }

    /// Add a gradient contribution. Frozen parameters ignore it, keeping
    /// their accumulated gradient at exactly zero.
    pub fn accumulate_grad(&mut self, g: &Tensor<E>) -> Result<()> {
        if !self.trainable {
            return Ok(());
        }
        self.grad.add_assign(g)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(E::zero());
    }
}

/// One plain SGD update: `value -= lr * grad` for every trainable parameter,
/// then all gradients are cleared.
pub fn sgd_step<'a, E: Scalar>(
    params: impl IntoIterator<Item = &'a mut Parameter<E>>,
    lr: E,
) -> Result<()> {
    if lr <= E::zero() {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    for p in params {
        if p.trainable {
            let value = Arc::make_mut(&mut p.value);
            for (v, g) in value.data.iter_mut().zip(&p.grad.data) {
                *v = *v - lr * *g;
            }
        }
        p.zero_grad();
    }
    Ok(())
}
