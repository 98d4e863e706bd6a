//! Dense tensors, reverse-mode differentiation, and the optimizer used to
//! train the bag classifiers.

mod gradcheck;
mod ops;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use ops::{activation, bce_loss, leaky_relu, sigmoid, softmax, Activation, BCE_EPS, LEAKY_SLOPE};
pub use optim::{cosine_anneal, Adam};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::{linear_forward, Tensor2D};

/// A trainable tensor together with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor2D,
    pub grad: Tensor2D,
    pub adam_m: Tensor2D,
    pub adam_v: Tensor2D,
    pub step: u64,
}

impl Param {
    pub fn new(value: Tensor2D) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            grad: Tensor2D::zeros(r, c),
            adam_m: Tensor2D::zeros(r, c),
            adam_v: Tensor2D::zeros(r, c),
            step: 0,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.values_mut().fill(0.0);
    }
}
