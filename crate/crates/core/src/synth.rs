//! Domain synthesis: turns a gray-scale corpus into the four image domains
//! (gray, color, edge, negative) used for adaptation experiments.
//!
//! - negative: per-pixel complement `1 - p` (exact on the pixel grid, so an
//!   involution)
//! - edge: Canny detector with Gaussian pre-blur, binary {0, 1} output
//! - color: per-channel absolute-difference blend with a texture patch
//! - gray: channel replication so every domain shares the H x W x 3 shape
//!
//! All transforms are deterministic; the only randomness is the texture
//! patch sampler, which derives one rng per image index from the synthesis
//! seed, so per-image work can run on any number of threads with identical
//! results.

use crate::error::{Error, Result};
use crate::img::{quantize_unit, Pixels3, RawImage};
use crate::scalar::Scalar;
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt;
use std::path::{Path, PathBuf};

/// The four image domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum DomainTag {
    Gray,
    Color,
    Edge,
    Negative,
}

impl DomainTag {
    pub const ALL: [DomainTag; 4] = [
        DomainTag::Gray,
        DomainTag::Color,
        DomainTag::Edge,
        DomainTag::Negative,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gray" | "g" => Ok(DomainTag::Gray),
            "color" | "c" => Ok(DomainTag::Color),
            "edge" | "e" => Ok(DomainTag::Edge),
            "negative" | "n" => Ok(DomainTag::Negative),
            other => Err(Error::config(format!("unknown domain tag: {other}"))),
        }
    }
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DomainTag::Gray => "gray",
            DomainTag::Color => "color",
            DomainTag::Edge => "edge",
            DomainTag::Negative => "negative",
        };
        f.write_str(s)
    }
}

/// Where color-blend texture patches come from.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub enum PatchMode {
    /// Random low-frequency RGB noise: a 4x4 random color grid bilinearly
    /// upsampled to the image size. No external data required.
    Procedural,
    /// Patches cropped/resized from user-supplied images in a directory.
    ExternalDirectory(PathBuf),
}

/// Texture patch sampler configuration.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TexturePatchSource {
    pub mode: PatchMode,
    pub seed: u64,
}

impl TexturePatchSource {
    pub fn procedural(seed: u64) -> Self {
        Self {
            mode: PatchMode::Procedural,
            seed,
        }
    }

    pub fn external(dir: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            mode: PatchMode::ExternalDirectory(dir.into()),
            seed,
        }
    }
}

/// Loaded, ready-to-sample patch state (external images are read up front).
pub struct PatchSampler<F: Scalar> {
    seed: u64,
    bank: Option<Vec<Pixels3<F>>>,
}

impl<F: Scalar> PatchSampler<F> {
    pub fn new(src: &TexturePatchSource) -> Result<Self> {
        let bank = match &src.mode {
            PatchMode::Procedural => None,
            PatchMode::ExternalDirectory(dir) => {
                let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
                    .map_err(|e| Error::config(format!("patch directory {dir:?}: {e}")))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| {
                        matches!(
                            p.extension().and_then(|s| s.to_str()),
                            Some("png") | Some("PNG")
                        )
                    })
                    .collect();
                paths.sort();
                if paths.is_empty() {
                    return Err(Error::config(format!(
                        "patch directory {dir:?} contains no readable images"
                    )));
                }
                let mut bank = Vec::with_capacity(paths.len());
                for p in &paths {
                    bank.push(crate::img::load_rgb_png::<F>(p)?);
                }
                Some(bank)
            }
        };
        Ok(Self {
            seed: src.seed,
            bank,
        })
    }

    /// Sample an H x W x 3 patch for image `index`. Same (seed, index) gives
    /// the same patch regardless of call order or thread assignment.
    pub fn sample(&self, index: usize, h: usize, w: usize) -> Pixels3<F> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64 + 1);
        match &self.bank {
            None => procedural_patch(&mut rng, h, w),
            Some(bank) => {
                let img = &bank[rng.gen_range(0..bank.len())];
                crop_or_resize(img, &mut rng, h, w)
            }
        }
    }
}

/// 4x4 random color grid, bilinearly upsampled.
fn procedural_patch<F: Scalar>(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Pixels3<F> {
    const G: usize = 4;
    let mut grid = [[[0f64; 3]; G]; G];
    for row in grid.iter_mut() {
        for cell in row.iter_mut() {
            for ch in cell.iter_mut() {
                *ch = rng.gen_range(0.0..1.0);
            }
        }
    }
    let mut out = Array3::zeros((h, w, 3));
    for i in 0..h {
        // map pixel centers onto the grid's [0, G-1] coordinate range
        let fy = if h > 1 {
            i as f64 / (h - 1) as f64 * (G - 1) as f64
        } else {
            0.0
        };
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(G - 1);
        let ty = fy - y0 as f64;
        for j in 0..w {
            let fx = if w > 1 {
                j as f64 / (w - 1) as f64 * (G - 1) as f64
            } else {
                0.0
            };
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(G - 1);
            let tx = fx - x0 as f64;
            for c in 0..3 {
                let top = grid[y0][x0][c] * (1.0 - tx) + grid[y0][x1][c] * tx;
                let bot = grid[y1][x0][c] * (1.0 - tx) + grid[y1][x1][c] * tx;
                out[[i, j, c]] = quantize_unit(F::from_f64(top * (1.0 - ty) + bot * ty));
            }
        }
    }
    out
}

fn crop_or_resize<F: Scalar>(
    img: &Pixels3<F>,
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
) -> Pixels3<F> {
    let (ph, pw, _) = img.dim();
    if ph >= h && pw >= w {
        let oy = rng.gen_range(0..=ph - h);
        let ox = rng.gen_range(0..=pw - w);
        let mut out = Array3::zeros((h, w, 3));
        for i in 0..h {
            for j in 0..w {
                for c in 0..3 {
                    out[[i, j, c]] = img[[oy + i, ox + j, c]];
                }
            }
        }
        out
    } else {
        // bilinear resize to the target size
        let mut out = Array3::zeros((h, w, 3));
        for i in 0..h {
            let fy = if h > 1 {
                i as f64 / (h - 1) as f64 * (ph - 1) as f64
            } else {
                0.0
            };
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(ph - 1);
            let ty = fy - y0 as f64;
            for j in 0..w {
                let fx = if w > 1 {
                    j as f64 / (w - 1) as f64 * (pw - 1) as f64
                } else {
                    0.0
                };
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(pw - 1);
                let tx = fx - x0 as f64;
                for c in 0..3 {
                    let v00 = img[[y0, x0, c]].to_f64();
                    let v01 = img[[y0, x1, c]].to_f64();
                    let v10 = img[[y1, x0, c]].to_f64();
                    let v11 = img[[y1, x1, c]].to_f64();
                    let top = v00 * (1.0 - tx) + v01 * tx;
                    let bot = v10 * (1.0 - tx) + v11 * tx;
                    out[[i, j, c]] = quantize_unit(F::from_f64(top * (1.0 - ty) + bot * ty));
                }
            }
        }
        out
    }
}

/// Per-pixel complement: unit-scale equivalent of `255 - v`.
///
/// On the pixel grid `1 - p` is exact, so applying this twice recovers the
/// input bit for bit.
pub fn to_negative<F: Scalar>(img: &RawImage<F>) -> RawImage<F> {
    let pixels = img.pixels().mapv(|p| F::one() - p);
    RawImage::new(pixels, img.source_id()).expect("complement preserves validity")
}

/// Canny edge detector parameters. Thresholds are fractions of the maximum
/// gradient magnitude in the image.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct CannyParams {
    pub low: f64,
    pub high: f64,
    pub blur_sigma: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            low: 0.1,
            high: 0.3,
            blur_sigma: 1.0,
        }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.low > 0.0 && self.low < self.high && self.high < 1.0) {
            return Err(Error::config(format!(
                "canny thresholds must satisfy 0 < low < high < 1, got low={} high={}",
                self.low, self.high
            )));
        }
        if self.blur_sigma <= 0.0 {
            return Err(Error::config("canny blur sigma must be positive"));
        }
        Ok(())
    }
}

/// Canny edge detection; output is binary {0, 1} with the same shape.
pub fn to_edge<F: Scalar>(img: &RawImage<F>, params: &CannyParams) -> Result<RawImage<F>> {
    params.validate()?;
    let gray: Array2<f64> = img.pixels().mapv(|p| p.to_f64());
    let blurred = gaussian_blur(&gray, params.blur_sigma);
    let (gx, gy) = sobel(&blurred);
    let (h, w) = gray.dim();

    let mut mag = Array2::<f64>::zeros((h, w));
    let mut max_mag = 0.0f64;
    for i in 0..h {
        for j in 0..w {
            let m = gx[[i, j]].hypot(gy[[i, j]]);
            mag[[i, j]] = m;
            if m > max_mag {
                max_mag = m;
            }
        }
    }
    let mut edges = Array2::<F>::zeros((h, w));
    // flat images leave only rounding noise in the gradient field; anything
    // below this floor is not a gradient (unit-scale images quantized to
    // 1/4096 cannot produce real gradients this small)
    if max_mag < 1e-6 {
        return RawImage::new(edges, img.source_id());
    }

    let thinned = non_maximum_suppression(&mag, &gx, &gy);
    let low = params.low * max_mag;
    let high = params.high * max_mag;

    // hysteresis: start from strong pixels, flood into weak neighbors
    let mut state = Array2::<u8>::zeros((h, w)); // 0 none, 1 weak, 2 strong
    let mut stack = Vec::new();
    for i in 0..h {
        for j in 0..w {
            let m = thinned[[i, j]];
            if m >= high {
                state[[i, j]] = 2;
                stack.push((i, j));
            } else if m >= low {
                state[[i, j]] = 1;
            }
        }
    }
    while let Some((i, j)) = stack.pop() {
        edges[[i, j]] = F::one();
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                let (ni, nj) = (i as i64 + di, j as i64 + dj);
                if ni < 0 || nj < 0 || ni >= h as i64 || nj >= w as i64 {
                    continue;
                }
                let (ni, nj) = (ni as usize, nj as usize);
                if state[[ni, nj]] == 1 {
                    state[[ni, nj]] = 2;
                    stack.push((ni, nj));
                }
            }
        }
    }
    RawImage::new(edges, img.source_id())
}

fn gaussian_blur(img: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let mut sum = 0.0;
    for k in -radius..=radius {
        let v = (-(k as f64).powi(2) / (2.0 * sigma * sigma)).exp();
        kernel.push(v);
        sum += v;
    }
    for v in kernel.iter_mut() {
        *v /= sum;
    }
    let (h, w) = img.dim();
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    // separable: horizontal then vertical, edge-replicated
    let mut tmp = Array2::<f64>::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let jj = clamp(j as i64 + ki as i64 - radius, w);
                acc += kv * img[[i, jj]];
            }
            tmp[[i, j]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let ii = clamp(i as i64 + ki as i64 - radius, h);
                acc += kv * tmp[[ii, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

fn sobel(img: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = img.dim();
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let at = |i: i64, j: i64| img[[clamp(i, h), clamp(j, w)]];
    let mut gx = Array2::<f64>::zeros((h, w));
    let mut gy = Array2::<f64>::zeros((h, w));
    for i in 0..h as i64 {
        for j in 0..w as i64 {
            gx[[i as usize, j as usize]] = -at(i - 1, j - 1) + at(i - 1, j + 1)
                - 2.0 * at(i, j - 1)
                + 2.0 * at(i, j + 1)
                - at(i + 1, j - 1)
                + at(i + 1, j + 1);
            gy[[i as usize, j as usize]] = -at(i - 1, j - 1) - 2.0 * at(i - 1, j) - at(i - 1, j + 1)
                + at(i + 1, j - 1)
                + 2.0 * at(i + 1, j)
                + at(i + 1, j + 1);
        }
    }
    (gx, gy)
}

fn non_maximum_suppression(
    mag: &Array2<f64>,
    gx: &Array2<f64>,
    gy: &Array2<f64>,
) -> Array2<f64> {
    let (h, w) = mag.dim();
    let mut out = Array2::<f64>::zeros((h, w));
    for i in 1..h.saturating_sub(1) {
        for j in 1..w.saturating_sub(1) {
            let mut angle = gy[[i, j]].atan2(gx[[i, j]]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            let (n1, n2) = if !(22.5..157.5).contains(&angle) {
                (mag[[i, j - 1]], mag[[i, j + 1]])
            } else if angle < 67.5 {
                (mag[[i - 1, j + 1]], mag[[i + 1, j - 1]])
            } else if angle < 112.5 {
                (mag[[i - 1, j]], mag[[i + 1, j]])
            } else {
                (mag[[i - 1, j - 1]], mag[[i + 1, j + 1]])
            };
            let m = mag[[i, j]];
            if m >= n1 && m >= n2 {
                out[[i, j]] = m;
            }
        }
    }
    out
}

/// Absolute-difference blend of a gray image with an RGB texture patch:
/// `out[c] = |gray - patch[c]|`.
pub fn to_color<F: Scalar>(img: &RawImage<F>, patch: &Pixels3<F>) -> Result<Pixels3<F>> {
    let (h, w) = img.pixels().dim();
    if patch.dim() != (h, w, 3) {
        return Err(Error::shape(
            format!("{h}x{w}x3 patch"),
            format!("{:?}", patch.dim()),
        ));
    }
    let mut out = Array3::zeros((h, w, 3));
    for i in 0..h {
        for j in 0..w {
            let g = img.pixels()[[i, j]];
            for c in 0..3 {
                out[[i, j, c]] = (g - patch[[i, j, c]]).abs();
            }
        }
    }
    Ok(out)
}

/// A domain-transformed image: always H x W x 3 so every domain shares one
/// shape.
#[derive(Debug, Clone)]
pub struct SynthesizedImage<F: Scalar> {
    pub pixels: Pixels3<F>,
    pub tag: DomainTag,
    pub source_id: String,
}

/// Options for [`synthesize_domain`].
#[derive(Debug, Clone)]
pub struct SynthesisConfig {
    pub canny: CannyParams,
    pub patches: TexturePatchSource,
}

impl SynthesisConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            canny: CannyParams::default(),
            patches: TexturePatchSource::procedural(seed),
        }
    }
}

/// Transform a whole corpus into one domain. Deterministic under `seed`
/// (which overrides the patch source seed), parallel over images.
pub fn synthesize_domain<F: Scalar>(
    corpus: &[RawImage<F>],
    tag: DomainTag,
    seed: u64,
    cfg: &SynthesisConfig,
) -> Result<Vec<SynthesizedImage<F>>> {
    if corpus.is_empty() {
        return Err(Error::data("cannot synthesize from an empty corpus"));
    }
    cfg.canny.validate()?;
    let sampler = match tag {
        DomainTag::Color => Some(PatchSampler::new(&TexturePatchSource {
            mode: cfg.patches.mode.clone(),
            seed,
        })?),
        _ => None,
    };
    corpus
        .par_iter()
        .enumerate()
        .map(|(idx, img)| {
            let pixels = match tag {
                DomainTag::Gray => crate::img::replicate_channels(img.pixels()),
                DomainTag::Negative => crate::img::replicate_channels(to_negative(img).pixels()),
                DomainTag::Edge => {
                    crate::img::replicate_channels(to_edge(img, &cfg.canny)?.pixels())
                }
                DomainTag::Color => {
                    let sampler = sampler.as_ref().expect("sampler built for color");
                    let patch = sampler.sample(idx, img.height(), img.width());
                    to_color(img, &patch)?
                }
            };
            Ok(SynthesizedImage {
                pixels,
                tag,
                source_id: img.source_id().to_string(),
            })
        })
        .collect()
}

/// One record of a synthesized-directory manifest: file path, class index,
/// task tag, domain tag.
#[derive(Debug, Clone)]
pub struct SynthManifestRecord {
    pub path: String,
    pub class_index: usize,
    pub task: String,
    pub domain: DomainTag,
}

/// Write a synthesized corpus as PNGs plus a manifest file into `dir`.
pub fn write_synth_dir<F: Scalar>(
    dir: &Path,
    images: &[SynthesizedImage<F>],
    classes: &[usize],
    task: &str,
) -> Result<()> {
    if images.len() != classes.len() {
        return Err(Error::data(format!(
            "{} images but {} class labels",
            images.len(),
            classes.len()
        )));
    }
    std::fs::create_dir_all(dir.join("images"))?;
    let mut manifest = String::new();
    for (i, (img, class)) in images.iter().zip(classes).enumerate() {
        let rel = format!("images/{i:06}.png");
        crate::img::save_rgb_png(&img.pixels, &dir.join(&rel))?;
        manifest.push_str(&format!("{rel}\t{class}\t{task}\t{}\n", img.tag));
    }
    std::fs::write(dir.join("manifest.tsv"), manifest)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::img::byte_to_unit;
    use ndarray::Array2;

    fn img_from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> RawImage<f64> {
        RawImage::new(Array2::from_shape_fn((h, w), |(i, j)| f(i, j)), "test").unwrap()
    }

    #[test]
    fn negative_endpoints_and_byte_values() {
        let img = img_from_fn(8, 8, |i, j| match (i, j) {
            (0, 0) => 1.0,
            (0, 1) => 0.0,
            _ => byte_to_unit::<f64>(100),
        });
        let neg = to_negative(&img);
        assert_eq!(neg.pixels()[[0, 0]], 0.0);
        assert_eq!(neg.pixels()[[0, 1]], 1.0);
        // byte 100 -> byte 155, exactly on the grid
        assert_eq!(neg.pixels()[[0, 2]], byte_to_unit::<f64>(155));
    }

    #[test]
    fn negative_is_exact_involution() {
        let img = img_from_fn(16, 16, |i, j| ((i * 31 + j * 17) % 256) as f64 / 255.0);
        let back = to_negative(&to_negative(&img));
        assert_eq!(back.pixels(), img.pixels());
    }

    #[test]
    fn edge_constant_image_is_all_zero() {
        let img = img_from_fn(16, 16, |_, _| 0.5);
        let edges = to_edge(&img, &CannyParams::default()).unwrap();
        assert!(edges.pixels().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn edge_step_concentrates_near_step_column() {
        // vertical step edge at column 8
        let img = img_from_fn(24, 24, |_, j| if j < 8 { 0.1 } else { 0.9 });
        let edges = to_edge(&img, &CannyParams::default()).unwrap();
        let mut any = false;
        for ((_, j), &v) in edges.pixels().indexed_iter() {
            assert!(v == 0.0 || v == 1.0, "edge output must be binary");
            if v == 1.0 {
                any = true;
                assert!(
                    (6..=9).contains(&j),
                    "edge pixel at column {j}, expected a band of width <= 3 around column 8"
                );
            }
        }
        assert!(any, "step edge must produce edge pixels");
    }

    #[test]
    fn edge_is_deterministic() {
        let img = img_from_fn(16, 16, |i, j| ((i * 7 + j * 13) % 11) as f64 / 10.0);
        let p = CannyParams::default();
        let a = to_edge(&img, &p).unwrap();
        let b = to_edge(&img, &p).unwrap();
        assert_eq!(a.pixels(), b.pixels());
    }

    #[test]
    fn edge_rejects_bad_thresholds() {
        let img = img_from_fn(8, 8, |_, _| 0.5);
        let bad = CannyParams {
            low: 0.5,
            high: 0.2,
            blur_sigma: 1.0,
        };
        assert!(to_edge(&img, &bad).is_err());
    }

    #[test]
    fn color_blend_examples() {
        let zeros = img_from_fn(8, 8, |_, _| 0.0);
        let patch = Array3::from_elem((8, 8, 3), quantize_unit(0.3f64));
        let out = to_color(&zeros, &patch).unwrap();
        assert!(out.iter().all(|&v| v == quantize_unit(0.3f64)));

        let ones = img_from_fn(8, 8, |_, _| 1.0);
        let patch = Array3::from_elem((8, 8, 3), 1.0f64);
        let out = to_color(&ones, &patch).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));

        let img = img_from_fn(8, 8, |_, _| 0.8);
        let patch = Array3::from_elem((8, 8, 3), 0.5f64);
        let out = to_color(&img, &patch).unwrap();
        let expected = quantize_unit(0.8f64) - 0.5;
        assert!(out.iter().all(|&v| (v - expected).abs() < 1e-12));
    }

    #[test]
    fn synthesize_gray_replicates_channels() {
        let corpus: Vec<_> = (0..10)
            .map(|k| img_from_fn(8, 8, |i, j| ((i + j + k) % 5) as f64 / 4.0))
            .collect();
        let out =
            synthesize_domain(&corpus, DomainTag::Gray, 0, &SynthesisConfig::with_seed(0)).unwrap();
        assert_eq!(out.len(), 10);
        for (s, raw) in out.iter().zip(&corpus) {
            for ((i, j, _), &v) in s.pixels.indexed_iter() {
                assert_eq!(v, raw.pixels()[[i, j]]);
            }
        }
    }

    #[test]
    fn synthesize_color_deterministic_and_seed_sensitive() {
        let corpus: Vec<_> = (0..10)
            .map(|k| img_from_fn(8, 8, |i, j| ((i * j + k) % 7) as f64 / 6.0))
            .collect();
        let cfg = SynthesisConfig::with_seed(0);
        let a = synthesize_domain(&corpus, DomainTag::Color, 11, &cfg).unwrap();
        let b = synthesize_domain(&corpus, DomainTag::Color, 11, &cfg).unwrap();
        let c = synthesize_domain(&corpus, DomainTag::Color, 12, &cfg).unwrap();
        let mut any_diff = false;
        for i in 0..10 {
            assert_eq!(a[i].pixels, b[i].pixels, "same seed must be bit-identical");
            if a[i].pixels != c[i].pixels {
                any_diff = true;
            }
        }
        assert!(any_diff, "different seeds should change color outputs");
    }

    #[test]
    fn synthesize_rejects_empty_corpus() {
        let corpus: Vec<RawImage<f64>> = vec![];
        assert!(
            synthesize_domain(&corpus, DomainTag::Gray, 0, &SynthesisConfig::with_seed(0))
                .is_err()
        );
    }

    #[test]
    fn all_domain_outputs_stay_in_unit_range() {
        let corpus: Vec<_> = (0..8)
            .map(|k| img_from_fn(12, 12, |i, j| ((i * 13 + j * 7 + k * 3) % 29) as f64 / 28.0))
            .collect();
        let cfg = SynthesisConfig::with_seed(3);
        for tag in DomainTag::ALL {
            let out = synthesize_domain(&corpus, tag, 3, &cfg).unwrap();
            for s in &out {
                assert_eq!(s.pixels.dim(), (12, 12, 3));
                for &v in s.pixels.iter() {
                    assert!((0.0..=1.0).contains(&v), "{tag}: pixel {v} out of range");
                }
            }
        }
    }
}
