//! Max pooling (with optional ceil-mode output sizing) and global average
//! pooling.

use crate::scalar::Scalar;
use ndarray::{Array2, Array4};

/// Max pooling over NCHW tensors. With `ceil` sizing the last window may be
/// partial; windows always intersect the input for the configurations used
/// here (a 2x2/stride-2 pool maps spatial size 1 to size 1).
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub ceil: bool,
}

pub struct PoolCache {
    /// flat input index of the max for every output element
    argmax: Vec<u32>,
    in_shape: (usize, usize, usize, usize),
    out_hw: (usize, usize),
}

impl MaxPool2d {
    pub fn ceil2x2() -> Self {
        Self {
            kernel: 2,
            stride: 2,
            pad: 0,
            ceil: true,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let f = |n: usize| {
            let num = n as i64 + 2 * self.pad as i64 - self.kernel as i64;
            let d = if self.ceil {
                // ceiling division; num may be negative for tiny inputs
                (num + self.stride as i64 - 1).div_euclid(self.stride as i64)
            } else {
                num.div_euclid(self.stride as i64)
            };
            (d.max(0) + 1) as usize
        };
        (f(h), f(w))
    }

    pub fn forward<F: Scalar>(&self, x: &Array4<F>) -> (Array4<F>, PoolCache) {
        let (n, c, h, w) = x.dim();
        let (oh, ow) = self.out_hw(h, w);
        let mut y = Array4::<F>::zeros((n, c, oh, ow));
        let mut argmax = vec![0u32; n * c * oh * ow];
        let xs = x.as_slice().expect("contiguous input");
        let ys = y.as_slice_mut().unwrap();
        let mut o = 0usize;
        for bi in 0..n {
            for ci in 0..c {
                let plane = ((bi * c + ci) * h) * w;
                for ohi in 0..oh {
                    let ih0 = (ohi * self.stride) as i64 - self.pad as i64;
                    for owi in 0..ow {
                        let iw0 = (owi * self.stride) as i64 - self.pad as i64;
                        let mut best = F::neg_infinity();
                        let mut best_idx = 0u32;
                        for kh in 0..self.kernel as i64 {
                            let ih = ih0 + kh;
                            if ih < 0 || ih >= h as i64 {
                                continue;
                            }
                            for kw in 0..self.kernel as i64 {
                                let iw = iw0 + kw;
                                if iw < 0 || iw >= w as i64 {
                                    continue;
                                }
                                let idx = plane + ih as usize * w + iw as usize;
                                if xs[idx] > best {
                                    best = xs[idx];
                                    best_idx = idx as u32;
                                }
                            }
                        }
                        debug_assert!(best.is_finite(), "pool window missed the input entirely");
                        ys[o] = best;
                        argmax[o] = best_idx;
                        o += 1;
                    }
                }
            }
        }
        (
            y,
            PoolCache {
                argmax,
                in_shape: (n, c, h, w),
                out_hw: (oh, ow),
            },
        )
    }

    pub fn backward<F: Scalar>(&self, cache: &PoolCache, dy: &Array4<F>) -> Array4<F> {
        let (n, c, h, w) = cache.in_shape;
        debug_assert_eq!(dy.dim().2, cache.out_hw.0);
        let mut dx = Array4::<F>::zeros((n, c, h, w));
        let dys = dy.as_slice().expect("contiguous dy");
        let dxs = dx.as_slice_mut().unwrap();
        for (o, &idx) in cache.argmax.iter().enumerate() {
            dxs[idx as usize] = dxs[idx as usize] + dys[o];
        }
        dx
    }
}

/// Mean over the spatial axes: (N, C, H, W) -> (N, C).
#[derive(Debug, Clone, Copy, Default)]
pub struct GlobalAvgPool;

impl GlobalAvgPool {
    pub fn forward<F: Scalar>(&self, x: &Array4<F>) -> (Array2<F>, (usize, usize)) {
        let (n, c, h, w) = x.dim();
        let scale = F::from_f64(1.0 / (h * w) as f64);
        let mut y = Array2::<F>::zeros((n, c));
        let xs = x.as_slice().unwrap();
        for bi in 0..n {
            for ci in 0..c {
                let base = ((bi * c + ci) * h) * w;
                let mut acc = F::zero();
                for v in &xs[base..base + h * w] {
                    acc = acc + *v;
                }
                y[[bi, ci]] = acc * scale;
            }
        }
        (y, (h, w))
    }

    pub fn backward<F: Scalar>(&self, hw: (usize, usize), dy: &Array2<F>) -> Array4<F> {
        let (n, c) = dy.dim();
        let (h, w) = hw;
        let scale = F::from_f64(1.0 / (h * w) as f64);
        let mut dx = Array4::<F>::zeros((n, c, h, w));
        let dxs = dx.as_slice_mut().unwrap();
        for bi in 0..n {
            for ci in 0..c {
                let g = dy[[bi, ci]] * scale;
                let base = ((bi * c + ci) * h) * w;
                for v in &mut dxs[base..base + h * w] {
                    *v = g;
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_2x2_picks_maxima_and_routes_gradient() {
        let pool = MaxPool2d::ceil2x2();
        let x = Array4::from_shape_vec(
            (1, 1, 2, 4),
            vec![1.0f64, 3.0, 2.0, 0.0, 4.0, 1.0, 1.0, 5.0],
        )
        .unwrap();
        let (y, cache) = pool.forward(&x);
        assert_eq!(y.dim(), (1, 1, 1, 2));
        assert_eq!(y[[0, 0, 0, 0]], 4.0);
        assert_eq!(y[[0, 0, 0, 1]], 5.0);
        let dy = Array4::from_elem((1, 1, 1, 2), 1.0f64);
        let dx = pool.backward(&cache, &dy);
        assert_eq!(dx[[0, 0, 1, 0]], 1.0);
        assert_eq!(dx[[0, 0, 1, 3]], 1.0);
        assert_eq!(dx.sum(), 2.0);
    }

    #[test]
    fn ceil_mode_handles_odd_and_unit_sizes() {
        let pool = MaxPool2d::ceil2x2();
        assert_eq!(pool.out_hw(7, 7), (4, 4));
        assert_eq!(pool.out_hw(1, 1), (1, 1));
        assert_eq!(pool.out_hw(2, 3), (1, 2));
        let x = Array4::from_elem((1, 1, 1, 1), 2.5f64);
        let (y, _) = pool.forward(&x);
        assert_eq!(y[[0, 0, 0, 0]], 2.5);
    }

    #[test]
    fn global_avg_pool_round_trip() {
        let gap = GlobalAvgPool;
        let x = Array4::from_shape_fn((2, 3, 2, 2), |(n, c, i, j)| (n + c + i + j) as f64);
        let (y, hw) = gap.forward(&x);
        assert_eq!(y.dim(), (2, 3));
        assert!((y[[0, 0]] - 1.0).abs() < 1e-12); // mean of 0,1,1,2
        let dy = Array2::from_elem((2, 3), 4.0f64);
        let dx = gap.backward(hw, &dy);
        assert!(dx.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }
}
