//! Fully connected layer: `y = x W^T + b`.

use super::Param;
use crate::scalar::Scalar;
use ndarray::{Array2, Ix1, Ix2};

#[derive(Debug, Clone)]
pub struct Linear<F: Scalar> {
    pub weight: Param<F>, // (out, in)
    pub bias: Param<F>,   // (out)
    pub in_features: usize,
    pub out_features: usize,
}

pub struct LinearCache<F: Scalar> {
    x: Array2<F>,
}

impl<F: Scalar> Linear<F> {
    pub fn new(name: &str, in_features: usize, out_features: usize, rng: &mut super::InitRng) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        let weight = Param::new(
            format!("{name}.weight"),
            rng.uniform(&[out_features, in_features], -bound, bound).into_dyn(),
        );
        let bias = Param::new(
            format!("{name}.bias"),
            rng.uniform(&[out_features], -bound, bound).into_dyn(),
        );
        Self {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn forward(&self, x: &Array2<F>) -> (Array2<F>, LinearCache<F>) {
        debug_assert_eq!(x.dim().1, self.in_features);
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let mut y = x.dot(&w.t());
        let b = self.bias.value.view().into_dimensionality::<Ix1>().unwrap();
        for mut row in y.outer_iter_mut() {
            row += &b;
        }
        (y, LinearCache { x: x.clone() })
    }

    pub fn backward(&mut self, cache: &LinearCache<F>, dy: &Array2<F>) -> Array2<F> {
        let dw = dy.t().dot(&cache.x);
        {
            let mut gw = self.weight.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
            gw += &dw;
        }
        let db = dy.sum_axis(ndarray::Axis(0));
        {
            let mut gb = self.bias.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
            gb += &db;
        }
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        dy.dot(&w)
    }

    pub fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<F>>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }

    pub fn param_refs<'a>(&'a self, out: &mut Vec<&'a Param<F>>) {
        out.push(&self.weight);
        out.push(&self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::InitRng;

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = InitRng::new(9);
        let mut lin = Linear::<f64>::new("l", 4, 3, &mut rng);
        let x = Array2::from_shape_fn((5, 4), |(i, j)| ((i * 5 + j * 3) % 7) as f64 / 7.0 - 0.4);
        let loss = |lin: &Linear<f64>, x: &Array2<f64>| {
            let (y, _) = lin.forward(x);
            y.iter().map(|v| v * v).sum::<f64>()
        };
        let (y, cache) = lin.forward(&x);
        let dy = y.mapv(|v| 2.0 * v);
        let dx = lin.backward(&cache, &dy);

        let eps = 1e-6;
        let mut xp = x.clone();
        for idx in [[0, 0], [4, 3], [2, 1]] {
            let orig = xp[idx];
            xp[idx] = orig + eps;
            let lp = loss(&lin, &xp);
            xp[idx] = orig - eps;
            let lm = loss(&lin, &xp);
            xp[idx] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            assert!((dx[idx] - fd).abs() / fd.abs().max(1.0) < 1e-6);
        }
        for flat in 0..12 {
            let orig = lin.weight.value.as_slice().unwrap()[flat];
            lin.weight.value.as_slice_mut().unwrap()[flat] = orig + eps;
            let lp = loss(&lin, &x);
            lin.weight.value.as_slice_mut().unwrap()[flat] = orig - eps;
            let lm = loss(&lin, &x);
            lin.weight.value.as_slice_mut().unwrap()[flat] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            let g = lin.weight.grad.as_slice().unwrap()[flat];
            assert!((g - fd).abs() / fd.abs().max(1.0) < 1e-6);
        }
    }
}
