//! Convex-combination data augmentation across tasks and domains.
//!
//! `dual_mix` interpolates two samples' pixels with a single weight and mixes
//! the domain label the same way, while carrying both category labels (with
//! their tasks) unmixed; the mixed classification loss consumes them with
//! weights lam and 1-lam. `build_contrastive_triplet` builds the three
//! index-aligned mixed batches that define the positive pairs for the two
//! contrastive objectives: rows of A and B share their task-of-interest
//! component, rows of B and C share their target component.

use crate::data::{LabeledImage, TaskTag, TripletBatch};
use crate::error::{Error, Result};
use crate::img::Pixels3;
use crate::scalar::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

/// A category label together with the task it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskLabel {
    pub class_index: usize,
    pub task: TaskTag,
}

/// Product of `dual_mix`.
#[derive(Debug, Clone)]
pub struct MixedSample<F: Scalar> {
    pub pixels: Pixels3<F>,
    pub lam: F,
    pub left_label: TaskLabel,
    pub right_label: TaskLabel,
    /// lam * d_left + (1 - lam) * d_right.
    pub mixed_domain: F,
}

/// Elementwise `lam * a + (1 - lam) * b`, clamped into the convex hull of the
/// operands (rounding may otherwise exceed it by an ulp).
pub fn mix_pixels<F: Scalar>(a: &Pixels3<F>, b: &Pixels3<F>, lam: F) -> Result<Pixels3<F>> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("{:?}", a.dim()), format!("{:?}", b.dim())));
    }
    let wl = lam;
    let wr = F::one() - lam;
    let mut out = a.clone();
    ndarray::Zip::from(&mut out).and(b).for_each(|x, &y| {
        let (lo, hi) = if *x <= y { (*x, y) } else { (y, *x) };
        let v = wl * *x + wr * y;
        *x = v.max(lo).min(hi);
    });
    Ok(out)
}

/// Mix pixels and domain label; keep both category labels with their tasks.
pub fn dual_mix<F: Scalar>(
    xi: &LabeledImage<F>,
    xj: &LabeledImage<F>,
    lam: F,
) -> Result<MixedSample<F>> {
    if !(F::zero()..=F::one()).contains(&lam) {
        return Err(Error::config(format!("lam must lie in [0,1], got {lam}")));
    }
    let pixels = mix_pixels(&xi.pixels, &xj.pixels, lam)?;
    let di = F::from_f64(xi.domain_label as f64);
    let dj = F::from_f64(xj.domain_label as f64);
    Ok(MixedSample {
        pixels,
        lam,
        left_label: TaskLabel {
            class_index: xi.class_index,
            task: xi.task,
        },
        right_label: TaskLabel {
            class_index: xj.class_index,
            task: xj.task,
        },
        mixed_domain: lam * di + (F::one() - lam) * dj,
    })
}

/// Three index-aligned mixed mini-batches sharing one lambda:
/// A mixes (source ToI, source IrT), B mixes (source ToI, target IrT),
/// C mixes (source IrT, target IrT).
#[derive(Debug, Clone)]
pub struct ContrastiveTriplet<F: Scalar> {
    pub a: Vec<Pixels3<F>>,
    pub b: Vec<Pixels3<F>>,
    pub c: Vec<Pixels3<F>>,
    pub lam: F,
}

/// Build the contrastive triplet from row-aligned batches with one shared
/// lambda.
pub fn build_contrastive_triplet<F: Scalar>(
    tb: &TripletBatch<'_, F>,
    lam: F,
) -> Result<ContrastiveTriplet<F>> {
    if !(F::zero()..=F::one()).contains(&lam) {
        return Err(Error::config(format!("lam must lie in [0,1], got {lam}")));
    }
    let k = tb.k();
    let mut a = Vec::with_capacity(k);
    let mut b = Vec::with_capacity(k);
    let mut c = Vec::with_capacity(k);
    for i in 0..k {
        a.push(mix_pixels(&tb.xs_r[i].pixels, &tb.xs_ir[i].pixels, lam)?);
        b.push(mix_pixels(&tb.xs_r[i].pixels, &tb.xt_ir[i].pixels, lam)?);
        c.push(mix_pixels(&tb.xs_ir[i].pixels, &tb.xt_ir[i].pixels, lam)?);
    }
    Ok(ContrastiveTriplet { a, b, c, lam })
}

/// Draws mixing weights from Beta(alpha, alpha).
#[derive(Debug, Clone)]
pub struct BetaSampler {
    alpha: f64,
    dist: Beta<f64>,
    rng: ChaCha8Rng,
}

impl BetaSampler {
    pub fn new(alpha: f64, rng: ChaCha8Rng) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::config(format!("beta alpha must be > 0, got {alpha}")));
        }
        let dist = Beta::new(alpha, alpha)
            .map_err(|e| Error::config(format!("beta({alpha}, {alpha}): {e}")))?;
        Ok(Self { alpha, dist, rng })
    }

    pub fn from_seed(alpha: f64, seed: u64) -> Result<Self> {
        Self::new(alpha, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// One draw in [0, 1]; advances the sampler state.
    pub fn sample_lambda(&mut self) -> f64 {
        self.dist.sample(&mut self.rng).clamp(0.0, 1.0)
    }

    /// The underlying generator. The trainer draws mixing-partner indices
    /// from the same stream so one captured rng state restores the whole
    /// mixup schedule.
    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TaskTag;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn img(fill: f64, class: usize, task: TaskTag, domain: u8) -> LabeledImage<f64> {
        LabeledImage {
            pixels: Array3::from_elem((8, 8, 3), fill),
            class_index: class,
            task,
            domain_label: domain,
            sample_id: 0,
        }
    }

    fn img_pattern(k: u64) -> LabeledImage<f64> {
        let pixels = Array3::from_shape_fn((8, 8, 3), |(i, j, c)| {
            ((i as u64 * 131 + j as u64 * 31 + c as u64 * 7 + k * 17) % 97) as f64 / 96.0
        });
        LabeledImage {
            pixels,
            class_index: (k % 3) as usize,
            task: if k % 2 == 0 { TaskTag::Toi } else { TaskTag::Irt },
            domain_label: (k % 2) as u8,
            sample_id: k,
        }
    }

    #[test]
    fn dual_mix_examples() {
        let xi = img(0.2, 1, TaskTag::Toi, 0);
        let xj = img(0.6, 2, TaskTag::Irt, 1);

        // lam = 1: identity endpoint
        let m = dual_mix(&xi, &xj, 1.0).unwrap();
        assert_eq!(m.pixels, xi.pixels);
        assert_eq!(m.mixed_domain, 0.0);

        // midpoint of (0.2, 0.6) is 0.4
        let m = dual_mix(&xi, &xj, 0.5).unwrap();
        assert!((m.pixels[[0, 0, 0]] - 0.4).abs() < 1e-15);

        // lam = 0.25 with d_i = 0, d_j = 1 gives 0.75
        let m = dual_mix(&xi, &xj, 0.25).unwrap();
        assert_eq!(m.mixed_domain, 0.75);
        assert_eq!(m.left_label, TaskLabel { class_index: 1, task: TaskTag::Toi });
        assert_eq!(m.right_label, TaskLabel { class_index: 2, task: TaskTag::Irt });
    }

    #[test]
    fn dual_mix_rejects_shape_mismatch() {
        let xi = img(0.2, 0, TaskTag::Toi, 0);
        let mut xj = img(0.6, 0, TaskTag::Irt, 1);
        xj.pixels = Array3::zeros((9, 8, 3));
        assert!(dual_mix(&xi, &xj, 0.5).is_err());
    }

    fn tiny_triplet(k: usize) -> (Vec<LabeledImage<f64>>, Vec<LabeledImage<f64>>, Vec<LabeledImage<f64>>) {
        let xs_r: Vec<_> = (0..k as u64).map(img_pattern).collect();
        let xs_ir: Vec<_> = (100..100 + k as u64).map(img_pattern).collect();
        let xt_ir: Vec<_> = (200..200 + k as u64).map(img_pattern).collect();
        (xs_r, xs_ir, xt_ir)
    }

    fn as_batch<'a>(
        t: &'a (Vec<LabeledImage<f64>>, Vec<LabeledImage<f64>>, Vec<LabeledImage<f64>>),
    ) -> TripletBatch<'a, f64> {
        TripletBatch {
            xs_r: t.0.iter().collect(),
            xs_ir: t.1.iter().collect(),
            xt_ir: t.2.iter().collect(),
        }
    }

    #[test]
    fn triplet_endpoints_collapse_to_operands() {
        let t = tiny_triplet(3);
        let tb = as_batch(&t);
        let one = build_contrastive_triplet(&tb, 1.0).unwrap();
        for i in 0..3 {
            assert_eq!(one.a[i], t.0[i].pixels, "lam=1: A = source ToI");
            assert_eq!(one.b[i], t.0[i].pixels, "lam=1: B = source ToI");
            assert_eq!(one.c[i], t.1[i].pixels, "lam=1: C = source IrT");
        }
        let zero = build_contrastive_triplet(&tb, 0.0).unwrap();
        for i in 0..3 {
            assert_eq!(zero.b[i], t.2[i].pixels, "lam=0: B = target IrT");
            assert_eq!(zero.c[i], t.2[i].pixels, "lam=0: C = target IrT");
        }
    }

    #[test]
    fn triplet_rows_are_index_aligned_and_share_lambda() {
        let t = tiny_triplet(2);
        let tb = as_batch(&t);
        let lam = 0.37;
        let trip = build_contrastive_triplet(&tb, lam).unwrap();
        assert_eq!(trip.a.len(), 2);
        // recover lambda from a pixel where the operands differ; every row of
        // every batch must yield the same value
        let recover = |mixed: &Pixels3<f64>, l: &Pixels3<f64>, r: &Pixels3<f64>| -> f64 {
            for ((idx, &m), (&lv, &rv)) in mixed.indexed_iter().zip(l.iter().zip(r.iter())) {
                let _ = idx;
                if (lv - rv).abs() > 0.1 {
                    return (m - rv) / (lv - rv);
                }
            }
            panic!("no distinguishing pixel found");
        };
        for i in 0..2 {
            let la = recover(&trip.a[i], &t.0[i].pixels, &t.1[i].pixels);
            let lb = recover(&trip.b[i], &t.0[i].pixels, &t.2[i].pixels);
            let lc = recover(&trip.c[i], &t.1[i].pixels, &t.2[i].pixels);
            for l in [la, lb, lc] {
                assert!((l - lam).abs() < 1e-6, "recovered {l}, expected {lam}");
            }
        }
    }

    #[test]
    fn beta_sampler_examples() {
        // Beta(1,1) is Uniform(0,1): empirical mean near 0.5
        let mut s = BetaSampler::from_seed(1.0, 42).unwrap();
        let draws: Vec<f64> = (0..10_000).map(|_| s.sample_lambda()).collect();
        assert!(draws.iter().all(|l| (0.0..=1.0).contains(l)));
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((0.48..=0.52).contains(&mean), "mean {mean}");

        // alpha = 0.2 is U-shaped, alpha = 5 is bell-shaped: mass near the
        // middle must be smaller for the former
        let frac_mid = |alpha: f64| {
            let mut s = BetaSampler::from_seed(alpha, 7).unwrap();
            (0..10_000)
                .map(|_| s.sample_lambda())
                .filter(|l| (0.4..=0.6).contains(l))
                .count() as f64
                / 10_000.0
        };
        assert!(frac_mid(0.2) < frac_mid(5.0));

        assert!(BetaSampler::from_seed(0.0, 0).is_err());
        assert!(BetaSampler::from_seed(-1.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn mix_stays_in_convex_hull(seed in 0u64..500, lam in 0.0f64..=1.0) {
            let xi = img_pattern(seed);
            let xj = img_pattern(seed + 1000);
            let m = dual_mix(&xi, &xj, lam).unwrap();
            for ((idx, &v), (&a, &b)) in m.pixels.indexed_iter().zip(xi.pixels.iter().zip(xj.pixels.iter())) {
                let _ = idx;
                prop_assert!(v >= a.min(b) && v <= a.max(b));
            }
            prop_assert!((0.0..=1.0).contains(&m.mixed_domain));
        }

        #[test]
        fn mix_is_symmetric_on_dyadic_lambdas(seed in 0u64..500, num in 0u32..=1024) {
            // dyadic lambdas make 1 - (1 - lam) exact, so the symmetry
            // identity holds bit for bit
            let lam = num as f64 / 1024.0;
            let xi = img_pattern(seed);
            let xj = img_pattern(seed + 1000);
            let m1 = dual_mix(&xi, &xj, lam).unwrap();
            let m2 = dual_mix(&xj, &xi, 1.0 - lam).unwrap();
            prop_assert_eq!(m1.pixels, m2.pixels);
        }
    }
}
