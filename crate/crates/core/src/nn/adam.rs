//! Adaptive-moment optimizer with bias correction.

use super::Param;
use crate::scalar::Scalar;
use ndarray::ArrayD;

#[derive(Debug, Clone)]
pub struct Adam<F: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<ArrayD<F>>,
    pub v: Vec<ArrayD<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(params: &[&Param<F>]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect(),
            v: params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect(),
        }
    }

    /// One update on the accumulated gradients. `params` must be the same
    /// tensors, in the same order, as at construction.
    pub fn step(&mut self, params: &mut [&mut Param<F>], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "optimizer/model parameter mismatch");
        self.t += 1;
        let b1 = F::from_f64(self.beta1);
        let b2 = F::from_f64(self.beta2);
        let one = F::one();
        let bc1 = F::from_f64(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = F::from_f64(1.0 - self.beta2.powi(self.t as i32));
        let lr = F::from_f64(lr);
        let eps = F::from_f64(self.eps);
        for (i, p) in params.iter_mut().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            debug_assert_eq!(m.raw_dim(), p.value.raw_dim(), "param {} shape", p.name);
            let g = p.grad.as_slice().expect("contiguous grad");
            let ms = m.as_slice_mut().unwrap();
            let vs = v.as_slice_mut().unwrap();
            let ps = p.value.as_slice_mut().unwrap();
            for j in 0..g.len() {
                let gj = g[j];
                ms[j] = b1 * ms[j] + (one - b1) * gj;
                vs[j] = b2 * vs[j] + (one - b2) * gj * gj;
                let m_hat = ms[j] / bc1;
                let v_hat = vs[j] / bc2;
                ps[j] = ps[j] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_descends_a_quadratic() {
        // minimize (x - 3)^2 elementwise
        let mut p = Param::new("x", ArrayD::<f64>::zeros(ndarray::IxDyn(&[4])));
        let mut opt = Adam::new(&[&p]);
        for _ in 0..2000 {
            p.zero_grad();
            let g: Vec<f64> = p.value.iter().map(|x| 2.0 * (x - 3.0)).collect();
            p.grad.as_slice_mut().unwrap().copy_from_slice(&g);
            opt.step(&mut [&mut p], 0.05);
        }
        for &x in p.value.iter() {
            assert!((x - 3.0).abs() < 1e-3, "converged to {x}");
        }
    }
}
