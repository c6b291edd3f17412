//! 2-d convolution via im2col + matrix multiply.
//!
//! The unfolded matrix is laid out (C_in*KH*KW, N*OH*OW) so both the unfold
//! and the fold walk the input row-contiguously, and the product
//! `weight (C_out, CKK) x cols (CKK, M)` is a single large GEMM.

use super::Param;
use crate::scalar::Scalar;
use ndarray::{Array2, Array4, ArrayView2, Ix2};

#[derive(Debug, Clone)]
pub struct Conv2d<F: Scalar> {
    pub weight: Param<F>,
    pub bias: Param<F>,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

pub struct ConvCache<F: Scalar> {
    cols: Array2<F>,
    in_shape: (usize, usize, usize, usize),
    out_hw: (usize, usize),
}

impl<F: Scalar> Conv2d<F> {
    pub fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut super::InitRng,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        let weight = Param::new(
            format!("{name}.weight"),
            rng.he_normal(&[c_out, fan_in], fan_in).into_dyn(),
        );
        let bias = Param::new(format!("{name}.bias"), ndarray::Array1::zeros(c_out).into_dyn());
        Self {
            weight,
            bias,
            c_in,
            c_out,
            kernel,
            stride,
            pad,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.pad - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.pad - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    pub fn forward(&self, x: &Array4<F>) -> (Array4<F>, ConvCache<F>) {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.c_in, "conv {}: input channels", self.weight.name);
        let (oh, ow) = self.out_hw(h, w);
        let m = n * oh * ow;
        let ckk = self.c_in * self.kernel * self.kernel;

        let mut cols = Array2::<F>::zeros((ckk, m));
        im2col(
            x.as_slice().expect("contiguous input"),
            cols.as_slice_mut().unwrap(),
            (n, c, h, w),
            (oh, ow),
            self.kernel,
            self.stride,
            self.pad,
        );

        let w2: ArrayView2<F> = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap();
        let mut out_mat = w2.dot(&cols); // (c_out, m)
        for (co, mut row) in out_mat.outer_iter_mut().enumerate() {
            let b = self.bias.value[[co]];
            row.mapv_inplace(|v| v + b);
        }

        let mut out = Array4::<F>::zeros((n, self.c_out, oh, ow));
        {
            let src = out_mat.as_slice().unwrap();
            let dst = out.as_slice_mut().unwrap();
            let ohw = oh * ow;
            for co in 0..self.c_out {
                for bi in 0..n {
                    let s = &src[co * m + bi * ohw..co * m + (bi + 1) * ohw];
                    let d = &mut dst[(bi * self.c_out + co) * ohw..(bi * self.c_out + co + 1) * ohw];
                    d.copy_from_slice(s);
                }
            }
        }
        (
            out,
            ConvCache {
                cols,
                in_shape: (n, c, h, w),
                out_hw: (oh, ow),
            },
        )
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &ConvCache<F>, dy: &Array4<F>) -> Array4<F> {
        let (n, c, h, w) = cache.in_shape;
        let (oh, ow) = cache.out_hw;
        let m = n * oh * ow;
        let ohw = oh * ow;
        debug_assert_eq!(dy.dim(), (n, self.c_out, oh, ow));

        // reorder dy into (c_out, m)
        let mut dy_mat = Array2::<F>::zeros((self.c_out, m));
        {
            let src = dy.as_slice().expect("contiguous dy");
            let dst = dy_mat.as_slice_mut().unwrap();
            for co in 0..self.c_out {
                for bi in 0..n {
                    let s = &src[(bi * self.c_out + co) * ohw..(bi * self.c_out + co + 1) * ohw];
                    let d = &mut dst[co * m + bi * ohw..co * m + (bi + 1) * ohw];
                    d.copy_from_slice(s);
                }
            }
        }

        let dw = dy_mat.dot(&cache.cols.t()); // (c_out, ckk)
        {
            let mut gw = self
                .weight
                .grad
                .view_mut()
                .into_dimensionality::<Ix2>()
                .unwrap();
            gw += &dw;
        }
        let db = dy_mat.sum_axis(ndarray::Axis(1));
        {
            let mut gb = self
                .bias
                .grad
                .view_mut()
                .into_dimensionality::<ndarray::Ix1>()
                .unwrap();
            gb += &db;
        }

        let w2: ArrayView2<F> = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap();
        let dcols = w2.t().dot(&dy_mat); // (ckk, m)

        let mut dx = Array4::<F>::zeros((n, c, h, w));
        col2im(
            dcols.as_slice().unwrap(),
            dx.as_slice_mut().unwrap(),
            (n, c, h, w),
            (oh, ow),
            self.kernel,
            self.stride,
            self.pad,
        );
        dx
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

/// Valid output-column range for one kernel offset: all `ow` with
/// `0 <= ow*stride + k - pad < limit`.
#[inline]
fn valid_range(k: usize, pad: usize, stride: usize, limit: usize, out_n: usize) -> (usize, usize) {
    let lo = if pad > k {
        (pad - k).div_ceil(stride)
    } else {
        0
    };
    let hi_inc = (limit as i64 - 1 + pad as i64 - k as i64) / stride as i64;
    if hi_inc < lo as i64 {
        (0, 0)
    } else {
        (lo, ((hi_inc as usize) + 1).min(out_n))
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col<F: Scalar>(
    x: &[F],
    cols: &mut [F],
    (n, c, h, w): (usize, usize, usize, usize),
    (oh, ow): (usize, usize),
    kernel: usize,
    stride: usize,
    pad: usize,
) {
    let m = n * oh * ow;
    for ci in 0..c {
        for kh in 0..kernel {
            let (oh_lo, oh_hi) = valid_range(kh, pad, stride, h, oh);
            for kw in 0..kernel {
                let r = (ci * kernel + kh) * kernel + kw;
                let row = &mut cols[r * m..(r + 1) * m];
                let (ow_lo, ow_hi) = valid_range(kw, pad, stride, w, ow);
                for bi in 0..n {
                    for ohi in oh_lo..oh_hi {
                        let ih = ohi * stride + kh - pad;
                        let x_base = ((bi * c + ci) * h + ih) * w;
                        let col_base = (bi * oh + ohi) * ow;
                        if stride == 1 {
                            let iw0 = ow_lo + kw - pad;
                            row[col_base + ow_lo..col_base + ow_hi]
                                .copy_from_slice(&x[x_base + iw0..x_base + iw0 + (ow_hi - ow_lo)]);
                        } else {
                            for owi in ow_lo..ow_hi {
                                row[col_base + owi] = x[x_base + owi * stride + kw - pad];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<F: Scalar>(
    dcols: &[F],
    dx: &mut [F],
    (n, c, h, w): (usize, usize, usize, usize),
    (oh, ow): (usize, usize),
    kernel: usize,
    stride: usize,
    pad: usize,
) {
    let m = n * oh * ow;
    for ci in 0..c {
        for kh in 0..kernel {
            let (oh_lo, oh_hi) = valid_range(kh, pad, stride, h, oh);
            for kw in 0..kernel {
                let r = (ci * kernel + kh) * kernel + kw;
                let row = &dcols[r * m..(r + 1) * m];
                let (ow_lo, ow_hi) = valid_range(kw, pad, stride, w, ow);
                for bi in 0..n {
                    for ohi in oh_lo..oh_hi {
                        let ih = ohi * stride + kh - pad;
                        let x_base = ((bi * c + ci) * h + ih) * w;
                        let col_base = (bi * oh + ohi) * ow;
                        for owi in ow_lo..ow_hi {
                            dx[x_base + owi * stride + kw - pad] =
                                dx[x_base + owi * stride + kw - pad] + row[col_base + owi];
                        }
                    }
                }
            }
        }
    }
}
