//! Batch normalization over the channel axis of NCHW tensors.
//!
//! Training mode normalizes with batch statistics and updates running
//! estimates (unbiased variance, momentum 0.1); evaluation mode uses the
//! running estimates and is a pure function.

use super::Param;
use crate::scalar::Scalar;
use ndarray::{Array1, Array4};

#[derive(Debug, Clone)]
pub struct BatchNorm2d<F: Scalar> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    pub eps: f64,
    pub momentum: f64,
    name: String,
    channels: usize,
}

pub struct BnCache<F: Scalar> {
    x_hat: Array4<F>,
    inv_std: Array1<F>,
}

impl<F: Scalar> BatchNorm2d<F> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), Array1::from_elem(channels, F::one()).into_dyn()),
            beta: Param::new(format!("{name}.beta"), Array1::zeros(channels).into_dyn()),
            running_mean: Array1::zeros(channels),
            running_var: Array1::from_elem(channels, F::one()),
            eps: 1e-5,
            momentum: 0.1,
            name: name.to_string(),
            channels,
        }
    }

    pub fn forward_train(&mut self, x: &Array4<F>) -> (Array4<F>, BnCache<F>) {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.channels, "bn {}: channels", self.name);
        let m = n * h * w;
        let m_f = F::from_f64(m as f64);
        let xs = x.as_slice().expect("contiguous input");

        let mut mean = Array1::<F>::zeros(c);
        let mut var = Array1::<F>::zeros(c);
        for ci in 0..c {
            let mut acc = F::zero();
            for bi in 0..n {
                let base = ((bi * c + ci) * h) * w;
                for v in &xs[base..base + h * w] {
                    acc = acc + *v;
                }
            }
            let mu = acc / m_f;
            let mut acc2 = F::zero();
            for bi in 0..n {
                let base = ((bi * c + ci) * h) * w;
                for v in &xs[base..base + h * w] {
                    let d = *v - mu;
                    acc2 = acc2 + d * d;
                }
            }
            mean[ci] = mu;
            var[ci] = acc2 / m_f;
        }

        let eps = F::from_f64(self.eps);
        let inv_std = var.mapv(|v| F::one() / (v + eps).sqrt());

        let mut x_hat = Array4::<F>::zeros((n, c, h, w));
        let mut y = Array4::<F>::zeros((n, c, h, w));
        {
            let xh = x_hat.as_slice_mut().unwrap();
            let ys = y.as_slice_mut().unwrap();
            for bi in 0..n {
                for ci in 0..c {
                    let base = ((bi * c + ci) * h) * w;
                    let (mu, is) = (mean[ci], inv_std[ci]);
                    let (g, b) = (self.gamma.value[[ci]], self.beta.value[[ci]]);
                    for o in base..base + h * w {
                        let xh_v = (xs[o] - mu) * is;
                        xh[o] = xh_v;
                        ys[o] = g * xh_v + b;
                    }
                }
            }
        }

        // running estimates use the unbiased variance
        let mom = F::from_f64(self.momentum);
        let one_m = F::one() - mom;
        let bessel = if m > 1 {
            F::from_f64(m as f64 / (m as f64 - 1.0))
        } else {
            F::one()
        };
        for ci in 0..c {
            self.running_mean[ci] = one_m * self.running_mean[ci] + mom * mean[ci];
            self.running_var[ci] = one_m * self.running_var[ci] + mom * var[ci] * bessel;
        }

        (y, BnCache { x_hat, inv_std })
    }

    pub fn forward_eval(&self, x: &Array4<F>) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.channels, "bn {}: channels", self.name);
        let eps = F::from_f64(self.eps);
        let mut y = Array4::<F>::zeros((n, c, h, w));
        let xs = x.as_slice().unwrap();
        let ys = y.as_slice_mut().unwrap();
        for bi in 0..n {
            for ci in 0..c {
                let base = ((bi * c + ci) * h) * w;
                let is = F::one() / (self.running_var[ci] + eps).sqrt();
                let mu = self.running_mean[ci];
                let (g, b) = (self.gamma.value[[ci]], self.beta.value[[ci]]);
                for o in base..base + h * w {
                    ys[o] = g * (xs[o] - mu) * is + b;
                }
            }
        }
        y
    }

    pub fn backward(&mut self, cache: &BnCache<F>, dy: &Array4<F>) -> Array4<F> {
        let (n, c, h, w) = dy.dim();
        let m = n * h * w;
        let m_f = F::from_f64(m as f64);
        let dys = dy.as_slice().expect("contiguous dy");
        let xh = cache.x_hat.as_slice().unwrap();

        let mut dgamma = Array1::<F>::zeros(c);
        let mut dbeta = Array1::<F>::zeros(c);
        for ci in 0..c {
            let mut dg = F::zero();
            let mut db = F::zero();
            for bi in 0..n {
                let base = ((bi * c + ci) * h) * w;
                for o in base..base + h * w {
                    dg = dg + dys[o] * xh[o];
                    db = db + dys[o];
                }
            }
            dgamma[ci] = dg;
            dbeta[ci] = db;
        }

        let mut dx = Array4::<F>::zeros((n, c, h, w));
        {
            let dxs = dx.as_slice_mut().unwrap();
            for ci in 0..c {
                let scale = self.gamma.value[[ci]] * cache.inv_std[ci];
                let mean_dy = dbeta[ci] / m_f;
                let mean_dy_xhat = dgamma[ci] / m_f;
                for bi in 0..n {
                    let base = ((bi * c + ci) * h) * w;
                    for o in base..base + h * w {
                        dxs[o] = scale * (dys[o] - mean_dy - xh[o] * mean_dy_xhat);
                    }
                }
            }
        }

        {
            let mut gg = self
                .gamma
                .grad
                .view_mut()
                .into_dimensionality::<ndarray::Ix1>()
                .unwrap();
            gg += &dgamma;
            let mut gb = self
                .beta
                .grad
                .view_mut()
                .into_dimensionality::<ndarray::Ix1>()
                .unwrap();
            gb += &dbeta;
        }
        dx
    }

    pub fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<F>>) {
        out.push(&mut self.gamma);
        out.push(&mut self.beta);
    }

    pub fn param_refs<'a>(&'a self, out: &mut Vec<&'a Param<F>>) {
        out.push(&self.gamma);
        out.push(&self.beta);
    }

    pub fn collect_buffers<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Array1<F>)>) {
        out.push((format!("{}.running_mean", self.name), &mut self.running_mean));
        out.push((format!("{}.running_var", self.name), &mut self.running_var));
    }

    pub fn buffer_refs<'a>(&'a self, out: &mut Vec<(String, &'a Array1<F>)>) {
        out.push((format!("{}.running_mean", self.name), &self.running_mean));
        out.push((format!("{}.running_var", self.name), &self.running_var));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_mode_normalizes_batch() {
        let mut bn = BatchNorm2d::<f64>::new("bn", 2);
        let x = Array4::from_shape_fn((3, 2, 2, 2), |(n, c, i, j)| {
            (n * 4 + i * 2 + j) as f64 * (c as f64 + 1.0)
        });
        let (y, _) = bn.forward_train(&x);
        for ci in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|n| (0..2).flat_map(move |i| (0..2).map(move |j| (n, i, j))))
                .map(|(n, i, j)| y[[n, ci, i, j]])
                .collect();
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-3, "unit variance up to eps, got {var}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut bn = BatchNorm2d::<f64>::new("bn", 2);
        bn.gamma.value.as_slice_mut().unwrap().copy_from_slice(&[1.3, 0.7]);
        bn.beta.value.as_slice_mut().unwrap().copy_from_slice(&[0.1, -0.2]);
        let x = Array4::from_shape_fn((2, 2, 3, 3), |(n, c, i, j)| {
            ((n * 13 + c * 7 + i * 5 + j * 3) % 11) as f64 / 11.0 - 0.3
        });
        // loss couples samples through the batch statistics
        let loss = |bn: &mut BatchNorm2d<f64>, x: &Array4<f64>| {
            let (y, _) = bn.forward_train(x);
            y.iter().enumerate().map(|(i, v)| v * v * (1.0 + (i % 3) as f64)).sum::<f64>()
        };
        let (y, cache) = bn.forward_train(&x);
        // dy = dL/dy of the loss above
        let mut dy = y.clone();
        for (i, v) in dy.as_slice_mut().unwrap().iter_mut().enumerate() {
            *v = 2.0 * y.as_slice().unwrap()[i] * (1.0 + (i % 3) as f64);
        }
        let dx = bn.backward(&cache, &dy);

        let eps = 1e-6;
        let mut xp = x.clone();
        for idx in [[0, 0, 0, 0], [1, 1, 2, 2], [0, 1, 1, 0]] {
            let orig = xp[idx];
            xp[idx] = orig + eps;
            let lp = loss(&mut bn, &xp);
            xp[idx] = orig - eps;
            let lm = loss(&mut bn, &xp);
            xp[idx] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            assert!(
                (dx[idx] - fd).abs() / fd.abs().max(1.0) < 1e-5,
                "dx {idx:?}: analytic {} vs fd {fd}",
                dx[idx]
            );
        }
        for ci in 0..2 {
            let orig = bn.gamma.value[[ci]];
            bn.gamma.value[[ci]] = orig + eps;
            let lp = loss(&mut bn, &x);
            bn.gamma.value[[ci]] = orig - eps;
            let lm = loss(&mut bn, &x);
            bn.gamma.value[[ci]] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            let g = bn.gamma.grad[[ci]];
            assert!((g - fd).abs() / fd.abs().max(1.0) < 1e-5, "dgamma[{ci}]: {g} vs {fd}");
        }
    }
}
