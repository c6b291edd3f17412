//! Minimal CPU neural-network layers with explicit forward/backward passes.
//!
//! No autodiff graph: every layer returns a cache from its forward pass and
//! consumes it in `backward`, accumulating parameter gradients in place.
//! This keeps the backward path auditable and lets the gradient-oracle tests
//! compare every analytic gradient against central finite differences.
//!
//! All layers are single-threaded and allocation-deterministic: the same
//! inputs produce bit-identical outputs on any machine and thread count.
//! Parallelism lives above this module (across training runs, across images
//! in synthesis).

mod adam;
mod bn;
mod block;
mod conv;
mod init;
mod linear;
mod pool;

pub use adam::Adam;
pub use block::{ConvBlock, ConvBlockCache};
pub use bn::{BatchNorm2d, BnCache};
pub use conv::{Conv2d, ConvCache};
pub use init::InitRng;
pub use linear::{Linear, LinearCache};
pub use pool::{GlobalAvgPool, MaxPool2d, PoolCache};

use crate::scalar::Scalar;
use ndarray::{Array4, ArrayD};

/// A named trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<F: Scalar> {
    pub name: String,
    pub value: ArrayD<F>,
    pub grad: ArrayD<F>,
}

impl<F: Scalar> Param<F> {
    pub fn new(name: impl Into<String>, value: ArrayD<F>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Rectified linear unit. Returns the activation; `relu_backward` masks the
/// upstream gradient using the activation itself (y > 0 iff x > 0).
pub fn relu<F: Scalar>(x: &Array4<F>) -> Array4<F> {
    x.mapv(|v| v.max(F::zero()))
}

pub fn relu_backward<F: Scalar>(y: &Array4<F>, dy: &Array4<F>) -> Array4<F> {
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx).and(y).for_each(|d, &v| {
        if v <= F::zero() {
            *d = F::zero();
        }
    });
    dx
}
