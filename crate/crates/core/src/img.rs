//! Image primitives: gray images on the unit interval and 3-channel images.
//!
//! Pixels are held as unit-interval reals; byte values only appear at the
//! PNG boundary. On construction every pixel is snapped to a fixed dyadic
//! grid (multiples of 1/4096). On that grid `1 - p` is exactly representable,
//! so the negative transform is an exact involution and repeated synthesis
//! runs are bit-identical. The grid is ~16x finer than byte quantization, so
//! byte round-trips are lossless.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use ndarray::{Array2, Array3};

/// Grid resolution for stored pixel values.
pub const PIXEL_GRID: f64 = 4096.0;

/// Minimum spatial extent of a raw image.
pub const MIN_SIDE: usize = 8;

/// Snap a unit-interval value to the pixel grid, clamping into [0, 1].
#[inline]
pub fn quantize_unit<F: Scalar>(v: F) -> F {
    let v = v.to_f64().clamp(0.0, 1.0);
    F::from_f64((v * PIXEL_GRID).round() / PIXEL_GRID)
}

/// Decode a byte intensity to the unit interval (on the pixel grid).
#[inline]
pub fn byte_to_unit<F: Scalar>(b: u8) -> F {
    quantize_unit(F::from_f64(b as f64 / 255.0))
}

/// Encode a unit-interval intensity as a byte.
#[inline]
pub fn unit_to_byte<F: Scalar>(v: F) -> u8 {
    (v.to_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// A single-channel image with intensities in [0, 1], prior to any domain
/// transform.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage<F: Scalar> {
    pixels: Array2<F>,
    source_id: String,
}

impl<F: Scalar> RawImage<F> {
    /// Builds a raw image, snapping pixels onto the storage grid.
    ///
    /// Rejects images smaller than 8x8 or containing non-finite values.
    pub fn new(pixels: Array2<F>, source_id: impl Into<String>) -> Result<Self> {
        let (h, w) = pixels.dim();
        if h < MIN_SIDE || w < MIN_SIDE {
            return Err(Error::data(format!(
                "image must be at least {MIN_SIDE}x{MIN_SIDE}, got {h}x{w}"
            )));
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::data("image contains non-finite pixels"));
        }
        Ok(Self {
            pixels: pixels.mapv(quantize_unit),
            source_id: source_id.into(),
        })
    }

    pub fn pixels(&self) -> &Array2<F> {
        &self.pixels
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }
}

/// H x W x 3 image with channels last, values in [0, 1].
pub type Pixels3<F> = Array3<F>;

/// Replicate a gray image across three channels.
pub fn replicate_channels<F: Scalar>(gray: &Array2<F>) -> Pixels3<F> {
    let (h, w) = gray.dim();
    let mut out = Array3::zeros((h, w, 3));
    for i in 0..h {
        for j in 0..w {
            let v = gray[[i, j]];
            out[[i, j, 0]] = v;
            out[[i, j, 1]] = v;
            out[[i, j, 2]] = v;
        }
    }
    out
}

/// Load a PNG as a gray raw image (RGB inputs are luma-converted).
pub fn load_gray_png<F: Scalar>(path: &std::path::Path) -> Result<RawImage<F>> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut pixels = Array2::zeros((h, w));
    for (x, y, p) in img.enumerate_pixels() {
        pixels[[y as usize, x as usize]] = byte_to_unit::<F>(p.0[0]);
    }
    RawImage::new(pixels, path.display().to_string())
}

/// Load a PNG as an H x W x 3 unit-interval image.
pub fn load_rgb_png<F: Scalar>(path: &std::path::Path) -> Result<Pixels3<F>> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut pixels = Array3::zeros((h, w, 3));
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            pixels[[y as usize, x as usize, c]] = byte_to_unit::<F>(p.0[c]);
        }
    }
    Ok(pixels)
}

/// Write an H x W x 3 unit-interval image as an RGB PNG.
pub fn save_rgb_png<F: Scalar>(pixels: &Pixels3<F>, path: &std::path::Path) -> Result<()> {
    let (h, w, c) = pixels.dim();
    if c != 3 {
        return Err(Error::shape("HxWx3", format!("{h}x{w}x{c}")));
    }
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for i in 0..h {
        for j in 0..w {
            let px = image::Rgb([
                unit_to_byte(pixels[[i, j, 0]]),
                unit_to_byte(pixels[[i, j, 1]]),
                unit_to_byte(pixels[[i, j, 2]]),
            ]);
            buf.put_pixel(j as u32, i as u32, px);
        }
    }
    buf.save(path)?;
    Ok(())
}

/// Write a gray unit-interval image as a luma PNG.
pub fn save_gray_png<F: Scalar>(pixels: &Array2<F>, path: &std::path::Path) -> Result<()> {
    let (h, w) = pixels.dim();
    let mut buf = image::GrayImage::new(w as u32, h as u32);
    for i in 0..h {
        for j in 0..w {
            buf.put_pixel(j as u32, i as u32, image::Luma([unit_to_byte(pixels[[i, j]])]));
        }
    }
    buf.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn byte_round_trip_is_lossless() {
        for b in 0..=255u8 {
            let v: f64 = byte_to_unit(b);
            assert_eq!(unit_to_byte(v), b);
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn quantized_complement_is_exact() {
        // 1 - p must be exact on the storage grid; this is what makes the
        // negative transform an involution.
        for b in 0..=255u8 {
            let v: f64 = byte_to_unit(b);
            let neg = 1.0 - v;
            assert_eq!(1.0 - neg, v, "byte {b}");
        }
    }

    #[test]
    fn rejects_small_images() {
        let px = Array2::<f64>::zeros((4, 9));
        assert!(RawImage::new(px, "x").is_err());
    }

    #[test]
    fn replicate_makes_three_identical_channels() {
        let mut px = Array2::<f32>::zeros((8, 8));
        px[[2, 3]] = 0.5;
        let rgb = replicate_channels(&px);
        assert_eq!(rgb.dim(), (8, 8, 3));
        for c in 0..3 {
            assert_eq!(rgb[[2, 3, c]], 0.5);
        }
    }
}
