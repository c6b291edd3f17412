//! Conv block: convolution, batch norm, ReLU, optional max pool.

use super::{relu, relu_backward, BatchNorm2d, BnCache, Conv2d, ConvCache, MaxPool2d, Param, PoolCache};
use crate::scalar::Scalar;
use ndarray::{Array1, Array4};

#[derive(Debug, Clone)]
pub struct ConvBlock<F: Scalar> {
    pub conv: Conv2d<F>,
    pub bn: BatchNorm2d<F>,
    pub pool: Option<MaxPool2d>,
}

pub struct ConvBlockCache<F: Scalar> {
    conv: ConvCache<F>,
    bn: BnCache<F>,
    relu_out: Array4<F>,
    pool: Option<PoolCache>,
}

impl<F: Scalar> ConvBlock<F> {
    pub fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        pool: Option<MaxPool2d>,
        rng: &mut super::InitRng,
    ) -> Self {
        Self {
            conv: Conv2d::new(&format!("{name}.conv"), c_in, c_out, 3, 1, 1, rng),
            bn: BatchNorm2d::new(&format!("{name}.bn"), c_out),
            pool,
        }
    }

    pub fn forward_train(&mut self, x: &Array4<F>) -> (Array4<F>, ConvBlockCache<F>) {
        let (z, conv) = self.conv.forward(x);
        let (z, bn) = self.bn.forward_train(&z);
        let a = relu(&z);
        match self.pool {
            Some(pool) => {
                let (y, pc) = pool.forward(&a);
                (
                    y,
                    ConvBlockCache {
                        conv,
                        bn,
                        relu_out: a,
                        pool: Some(pc),
                    },
                )
            }
            None => (
                a.clone(),
                ConvBlockCache {
                    conv,
                    bn,
                    relu_out: a,
                    pool: None,
                },
            ),
        }
    }

    pub fn forward_eval(&self, x: &Array4<F>) -> Array4<F> {
        let (z, _) = self.conv.forward(x);
        let a = relu(&self.bn.forward_eval(&z));
        match self.pool {
            Some(pool) => pool.forward(&a).0,
            None => a,
        }
    }

    pub fn backward(&mut self, cache: &ConvBlockCache<F>, dy: &Array4<F>) -> Array4<F> {
        let da = match (&self.pool, &cache.pool) {
            (Some(pool), Some(pc)) => pool.backward(pc, dy),
            _ => dy.clone(),
        };
        let dz = relu_backward(&cache.relu_out, &da);
        let dz = self.bn.backward(&cache.bn, &dz);
        self.conv.backward(&cache.conv, &dz)
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let (h, w) = self.conv.out_hw(h, w);
        match self.pool {
            Some(pool) => pool.out_hw(h, w),
            None => (h, w),
        }
    }

    pub fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<F>>) {
        self.conv.collect_params(out);
        self.bn.collect_params(out);
    }

    pub fn param_refs<'a>(&'a self, out: &mut Vec<&'a Param<F>>) {
        self.conv.param_refs(out);
        self.bn.param_refs(out);
    }

    pub fn collect_buffers<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Array1<F>)>) {
        self.bn.collect_buffers(out);
    }

    pub fn buffer_refs<'a>(&'a self, out: &mut Vec<(String, &'a Array1<F>)>) {
        self.bn.buffer_refs(out);
    }
}
