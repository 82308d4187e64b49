//! Minimal layer library with explicit forward/backward passes.
//!
//! Every layer caches what its backward pass needs during `forward`, so a
//! `backward` call must follow the matching `forward`. Gradients accumulate
//! into [`Param::grad`] until [`zero_grads`] is called.

mod activation;
mod batchnorm;
mod block;
mod conv;
mod linear;

pub use activation::Relu;
pub use batchnorm::BatchNorm2d;
pub use block::{BasicBlock, GlobalAvgPool, Sequential};
pub use conv::Conv2d;
pub use linear::Linear;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A named parameter or state buffer.
///
/// Buffers (`trainable == false`) such as batch-norm running statistics are
/// checkpointed but never touched by the optimizer.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub trainable: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: &[usize], value: Vec<f64>) -> Self {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        let grad = vec![0.0; value.len()];
        Self { name: name.into(), shape: shape.to_vec(), value, grad, trainable: true }
    }

    pub fn buffer(name: impl Into<String>, shape: &[usize], value: Vec<f64>) -> Self {
        Self { trainable: false, grad: Vec::new(), ..Self::new(name, shape, value) }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub(crate) fn kaiming_normal<R: Rng>(name: impl Into<String>, shape: &[usize], fan: usize, rng: &mut R) -> Self {
        let std = (2.0 / fan as f64).sqrt();
        let n = shape.iter().product();
        let value = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Self::new(name, shape, value)
    }

    pub(crate) fn uniform<R: Rng>(name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let value = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        Self::new(name, shape, value)
    }
}

pub trait Layer: Send {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Tensor;

    /// Propagates `grad_output` back to the layer input, accumulating parameter gradients.
    fn backward(&mut self, grad_output: &Tensor) -> Tensor;

    fn visit(&self, f: &mut dyn FnMut(&Param));

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param));
}

pub fn zero_grads(layer: &mut dyn Layer) {
    layer.visit_mut(&mut |p| p.grad.iter_mut().for_each(|g| *g = 0.0));
}

/// Number of trainable scalars.
pub fn parameter_count(layer: &dyn Layer) -> usize {
    let mut n = 0;
    layer.visit(&mut |p| {
        if p.trainable {
            n += p.len();
        }
    });
    n
}
