//! Dataset model for the zero-shot adaptation setting: four splits
//! (source task-of-interest, source irrelevant-task, target irrelevant-task,
//! and a held-out target task-of-interest split used only for evaluation),
//! disjoint label spaces, and aligned triplet mini-batch sampling.
//!
//! The trainer never receives the dataset itself; it receives a [`TrainView`]
//! that simply has no field or accessor for the evaluation split, so eval
//! leakage is unrepresentable in the training code. A runtime consumption
//! guard double-checks this (see the trainer module).

use crate::error::{Error, Result};
use crate::img::Pixels3;
use crate::scalar::Scalar;
use ndarray::Array4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::path::Path;

/// Which classification task a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum TaskTag {
    /// Task of interest: evaluated at test time.
    Toi,
    /// Irrelevant task: auxiliary supervision available in both domains.
    Irt,
}

impl fmt::Display for TaskTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskTag::Toi => "TOI",
            TaskTag::Irt => "IRT",
        })
    }
}

impl TaskTag {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "TOI" | "toi" => Ok(TaskTag::Toi),
            "IRT" | "irt" => Ok(TaskTag::Irt),
            other => Err(Error::data(format!("unknown task tag: {other}"))),
        }
    }
}

/// One sample: pixels, class index local to its task's label space, task tag,
/// binary domain label (0 = source, 1 = target) and a dataset-unique id used
/// by the eval-isolation guard.
#[derive(Debug, Clone)]
pub struct LabeledImage<F: Scalar> {
    pub pixels: Pixels3<F>,
    pub class_index: usize,
    pub task: TaskTag,
    pub domain_label: u8,
    pub sample_id: u64,
}

/// Ordered class names for the two tasks; the sets must be disjoint.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LabelSpaces {
    pub toi_classes: Vec<String>,
    pub irt_classes: Vec<String>,
}

impl LabelSpaces {
    pub fn validate(&self) -> Result<()> {
        if self.toi_classes.is_empty() || self.irt_classes.is_empty() {
            return Err(Error::data("label spaces must both be nonempty"));
        }
        for c in &self.toi_classes {
            if self.irt_classes.contains(c) {
                return Err(Error::data(format!(
                    "label spaces must be disjoint; class {c:?} appears in both"
                )));
            }
        }
        Ok(())
    }
}

/// Split a class list into a task-of-interest part (`toi_count` classes
/// chosen uniformly under `seed`) and the remainder.
pub fn partition_label_space(
    all_classes: &[String],
    toi_count: usize,
    seed: u64,
) -> Result<LabelSpaces> {
    if toi_count == 0 || toi_count >= all_classes.len() {
        return Err(Error::config(format!(
            "toi_count must be in [1, {}), got {toi_count}",
            all_classes.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..all_classes.len()).collect();
    // partial Fisher-Yates: the first toi_count entries are a uniform sample
    for i in 0..toi_count {
        let j = i + rand::Rng::gen_range(&mut rng, 0..idx.len() - i);
        idx.swap(i, j);
    }
    let mut toi: Vec<usize> = idx[..toi_count].to_vec();
    let mut irt: Vec<usize> = idx[toi_count..].to_vec();
    toi.sort_unstable();
    irt.sort_unstable();
    Ok(LabelSpaces {
        toi_classes: toi.iter().map(|&i| all_classes[i].clone()).collect(),
        irt_classes: irt.iter().map(|&i| all_classes[i].clone()).collect(),
    })
}

/// Names of the four splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitName {
    SourceToi,
    SourceIrt,
    TargetIrt,
    TargetToiEval,
}

impl SplitName {
    pub const ALL: [SplitName; 4] = [
        SplitName::SourceToi,
        SplitName::SourceIrt,
        SplitName::TargetIrt,
        SplitName::TargetToiEval,
    ];

    pub fn file_stem(self) -> &'static str {
        match self {
            SplitName::SourceToi => "source_toi",
            SplitName::SourceIrt => "source_irt",
            SplitName::TargetIrt => "target_irt",
            SplitName::TargetToiEval => "target_toi_eval",
        }
    }

    fn expected(self) -> (TaskTag, u8) {
        match self {
            SplitName::SourceToi => (TaskTag::Toi, 0),
            SplitName::SourceIrt => (TaskTag::Irt, 0),
            SplitName::TargetIrt => (TaskTag::Irt, 1),
            SplitName::TargetToiEval => (TaskTag::Toi, 1),
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

/// The assembled dataset. The evaluation split is private; it can only be
/// reached through [`ZsdaDataset::eval_split`], which training code never
/// touches (the trainer is handed a [`TrainView`]).
#[derive(Debug, Clone)]
pub struct ZsdaDataset<F: Scalar> {
    source_toi: Vec<LabeledImage<F>>,
    source_irt: Vec<LabeledImage<F>>,
    target_irt: Vec<LabeledImage<F>>,
    target_toi_eval: Vec<LabeledImage<F>>,
    label_spaces: LabelSpaces,
}

impl<F: Scalar> ZsdaDataset<F> {
    /// Assemble and validate a dataset. Sample ids are (re)assigned so they
    /// are unique across all four splits.
    pub fn new(
        mut source_toi: Vec<LabeledImage<F>>,
        mut source_irt: Vec<LabeledImage<F>>,
        mut target_irt: Vec<LabeledImage<F>>,
        mut target_toi_eval: Vec<LabeledImage<F>>,
        label_spaces: LabelSpaces,
    ) -> Result<Self> {
        let mut next_id = 0u64;
        for split in [
            &mut source_toi,
            &mut source_irt,
            &mut target_irt,
            &mut target_toi_eval,
        ] {
            for s in split.iter_mut() {
                s.sample_id = next_id;
                next_id += 1;
            }
        }
        let ds = Self {
            source_toi,
            source_irt,
            target_irt,
            target_toi_eval,
            label_spaces,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Single validation pass over every dataset invariant.
    pub fn validate(&self) -> Result<()> {
        self.label_spaces.validate()?;
        for name in SplitName::ALL {
            let split = self.split(name);
            if split.is_empty() {
                return Err(Error::data(format!("split {name} is empty")));
            }
            let (task, domain) = name.expected();
            let space = match task {
                TaskTag::Toi => &self.label_spaces.toi_classes,
                TaskTag::Irt => &self.label_spaces.irt_classes,
            };
            for (i, s) in split.iter().enumerate() {
                if s.task != task {
                    return Err(Error::data(format!(
                        "split {name} sample {i}: task {} but split requires {task}",
                        s.task
                    )));
                }
                if s.domain_label != domain {
                    return Err(Error::data(format!(
                        "split {name} sample {i}: domain {} but split requires {domain}",
                        s.domain_label
                    )));
                }
                if s.class_index >= space.len() {
                    return Err(Error::data(format!(
                        "split {name} sample {i}: class index {} outside the {} {task} classes",
                        s.class_index,
                        space.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn label_spaces(&self) -> &LabelSpaces {
        &self.label_spaces
    }

    pub fn split(&self, name: SplitName) -> &[LabeledImage<F>] {
        match name {
            SplitName::SourceToi => &self.source_toi,
            SplitName::SourceIrt => &self.source_irt,
            SplitName::TargetIrt => &self.target_irt,
            SplitName::TargetToiEval => &self.target_toi_eval,
        }
    }

    /// The training-facing view: no evaluation split.
    pub fn train_view(&self) -> TrainView<'_, F> {
        TrainView {
            source_toi: &self.source_toi,
            source_irt: &self.source_irt,
            target_irt: &self.target_irt,
            label_spaces: &self.label_spaces,
        }
    }

    /// Held-out target task-of-interest samples; evaluation only.
    pub fn eval_split(&self) -> &[LabeledImage<F>] {
        &self.target_toi_eval
    }

    pub fn eval_sample_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.target_toi_eval.iter().map(|s| s.sample_id)
    }
}

/// What the trainer sees: the three training splits and the label spaces.
#[derive(Debug, Clone, Copy)]
pub struct TrainView<'a, F: Scalar> {
    pub source_toi: &'a [LabeledImage<F>],
    pub source_irt: &'a [LabeledImage<F>],
    pub target_irt: &'a [LabeledImage<F>],
    pub label_spaces: &'a LabelSpaces,
}

/// Three index-aligned mini-batches of K samples, one per training split.
#[derive(Debug)]
pub struct TripletBatch<'a, F: Scalar> {
    pub xs_r: Vec<&'a LabeledImage<F>>,
    pub xs_ir: Vec<&'a LabeledImage<F>>,
    pub xt_ir: Vec<&'a LabeledImage<F>>,
}

impl<'a, F: Scalar> TripletBatch<'a, F> {
    pub fn k(&self) -> usize {
        self.xs_r.len()
    }

    pub fn sample_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.xs_r
            .iter()
            .chain(self.xs_ir.iter())
            .chain(self.xt_ir.iter())
            .map(|s| s.sample_id)
    }
}

/// Draw K distinct indices per split, uniformly. Sampling is with
/// replacement across calls (iteration-based training), without replacement
/// within one batch.
pub fn sample_triplet_batch<'a, F: Scalar>(
    view: &TrainView<'a, F>,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TripletBatch<'a, F>> {
    if k < 2 {
        return Err(Error::config(format!("batch size must be >= 2, got {k}")));
    }
    let mut pick = |split: &'a [LabeledImage<F>], name: &str| -> Result<Vec<&'a LabeledImage<F>>> {
        if split.len() < k {
            return Err(Error::data(format!(
                "split {name} has {} samples, fewer than batch size {k}",
                split.len()
            )));
        }
        let idx = rand::seq::index::sample(rng, split.len(), k);
        Ok(idx.iter().map(|i| &split[i]).collect())
    };
    Ok(TripletBatch {
        xs_r: pick(view.source_toi, "source_toi")?,
        xs_ir: pick(view.source_irt, "source_irt")?,
        xt_ir: pick(view.target_irt, "target_irt")?,
    })
}

/// Stack HWC images into an NCHW batch tensor.
pub fn batch_to_nchw<F: Scalar>(samples: &[&LabeledImage<F>]) -> Array4<F> {
    assert!(!samples.is_empty());
    let (h, w, c) = samples[0].pixels.dim();
    let mut out = Array4::zeros((samples.len(), c, h, w));
    for (n, s) in samples.iter().enumerate() {
        debug_assert_eq!(s.pixels.dim(), (h, w, c));
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    out[[n, ch, i, j]] = s.pixels[[i, j, ch]];
                }
            }
        }
    }
    out
}

/// Stack raw HWC pixel arrays into an NCHW batch tensor.
pub fn pixels_to_nchw<F: Scalar>(images: &[Pixels3<F>]) -> Array4<F> {
    assert!(!images.is_empty());
    let (h, w, c) = images[0].dim();
    let mut out = Array4::zeros((images.len(), c, h, w));
    for (n, img) in images.iter().enumerate() {
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    out[[n, ch, i, j]] = img[[i, j, ch]];
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Manifest I/O
//
// A dataset directory holds one manifest per split
// (`<split>.tsv`, lines `relative_path<TAB>class_index<TAB>task<TAB>domain`),
// two class-list files (`classes_toi.txt`, `classes_irt.txt`, one name per
// line) and the referenced image files.
// ---------------------------------------------------------------------------

fn read_class_file(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read class list {path:?}: {e}")))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Load a dataset directory, validating every invariant; any violation is an
/// error naming the offending file and line.
pub fn load_manifest<F: Scalar>(dir: &Path) -> Result<ZsdaDataset<F>> {
    let label_spaces = LabelSpaces {
        toi_classes: read_class_file(&dir.join("classes_toi.txt"))?,
        irt_classes: read_class_file(&dir.join("classes_irt.txt"))?,
    };
    label_spaces.validate()?;

    let mut splits: Vec<Vec<LabeledImage<F>>> = Vec::new();
    for name in SplitName::ALL {
        let manifest = dir.join(format!("{}.tsv", name.file_stem()));
        let text = std::fs::read_to_string(&manifest)
            .map_err(|e| Error::data(format!("missing split manifest {manifest:?}: {e}")))?;
        let (want_task, want_domain) = name.expected();
        let space_len = match want_task {
            TaskTag::Toi => label_spaces.toi_classes.len(),
            TaskTag::Irt => label_spaces.irt_classes.len(),
        };
        let mut split = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let loc = format!("{}:{}", manifest.display(), lineno + 1);
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::data(format!(
                    "{loc}: expected 4 tab-separated fields, got {}",
                    fields.len()
                )));
            }
            let class_index: usize = fields[1]
                .parse()
                .map_err(|_| Error::data(format!("{loc}: bad class index {:?}", fields[1])))?;
            let task = TaskTag::parse(fields[2])
                .map_err(|_| Error::data(format!("{loc}: bad task tag {:?}", fields[2])))?;
            let domain: u8 = match fields[3] {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::data(format!("{loc}: bad domain label {other:?}")));
                }
            };
            if task != want_task {
                return Err(Error::data(format!(
                    "{loc}: task {task} does not match split {name}"
                )));
            }
            if domain != want_domain {
                return Err(Error::data(format!(
                    "{loc}: domain {domain} does not match split {name}"
                )));
            }
            if class_index >= space_len {
                return Err(Error::data(format!(
                    "{loc}: class index {class_index} outside the {space_len}-class {task} label space"
                )));
            }
            let pixels = crate::img::load_rgb_png::<F>(&dir.join(fields[0]))?;
            split.push(LabeledImage {
                pixels,
                class_index,
                task,
                domain_label: domain,
                sample_id: 0,
            });
        }
        splits.push(split);
    }
    let mut it = splits.into_iter();
    ZsdaDataset::new(
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        label_spaces,
    )
}

/// Write a dataset directory (PNGs, per-split manifests, class lists).
pub fn save_dataset<F: Scalar>(dir: &Path, ds: &ZsdaDataset<F>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("classes_toi.txt"),
        ds.label_spaces().toi_classes.join("\n") + "\n",
    )?;
    std::fs::write(
        dir.join("classes_irt.txt"),
        ds.label_spaces().irt_classes.join("\n") + "\n",
    )?;
    for name in SplitName::ALL {
        let split = ds.split(name);
        let sub = format!("images/{}", name.file_stem());
        std::fs::create_dir_all(dir.join(&sub))?;
        let mut manifest = String::new();
        for (i, s) in split.iter().enumerate() {
            let rel = format!("{sub}/{i:06}.png");
            crate::img::save_rgb_png(&s.pixels, &dir.join(&rel))?;
            manifest.push_str(&format!(
                "{rel}\t{}\t{}\t{}\n",
                s.class_index, s.task, s.domain_label
            ));
        }
        std::fs::write(dir.join(format!("{}.tsv", name.file_stem())), manifest)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    pub(crate) fn dummy_image<F: Scalar>(
        class_index: usize,
        task: TaskTag,
        domain_label: u8,
        fill: f64,
    ) -> LabeledImage<F> {
        LabeledImage {
            pixels: Array3::from_elem((8, 8, 3), F::from_f64(fill)),
            class_index,
            task,
            domain_label,
            sample_id: 0,
        }
    }

    pub(crate) fn tiny_dataset(n_per_split: usize) -> ZsdaDataset<f64> {
        let spaces = LabelSpaces {
            toi_classes: vec!["a".into(), "b".into()],
            irt_classes: vec!["x".into(), "y".into(), "z".into()],
        };
        let mk = |task, domain, n_classes: usize| {
            (0..n_per_split)
                .map(|i| dummy_image(i % n_classes, task, domain, i as f64 / n_per_split as f64))
                .collect::<Vec<_>>()
        };
        ZsdaDataset::new(
            mk(TaskTag::Toi, 0, 2),
            mk(TaskTag::Irt, 0, 3),
            mk(TaskTag::Irt, 1, 3),
            mk(TaskTag::Toi, 1, 2),
            spaces,
        )
        .unwrap()
    }

    #[test]
    fn partition_65_classes_into_10_and_55() {
        let all: Vec<String> = (0..65).map(|i| format!("c{i}")).collect();
        let spaces = partition_label_space(&all, 10, 7).unwrap();
        assert_eq!(spaces.toi_classes.len(), 10);
        assert_eq!(spaces.irt_classes.len(), 55);
        spaces.validate().unwrap();
        // determinism
        let again = partition_label_space(&all, 10, 7).unwrap();
        assert_eq!(spaces, again);
        // different seed should (almost surely) differ
        let other = partition_label_space(&all, 10, 8).unwrap();
        assert_ne!(spaces.toi_classes, other.toi_classes);
    }

    #[test]
    fn partition_minimal_split() {
        let all = vec!["p".to_string(), "q".to_string()];
        let spaces = partition_label_space(&all, 1, 0).unwrap();
        assert_eq!(spaces.toi_classes.len(), 1);
        assert_eq!(spaces.irt_classes.len(), 1);
        assert!(partition_label_space(&all, 2, 0).is_err());
        assert!(partition_label_space(&all, 0, 0).is_err());
    }

    #[test]
    fn triplet_sampling_shapes_and_determinism() {
        let ds = tiny_dataset(8);
        let view = ds.train_view();
        let mut rng1 = ChaCha8Rng::seed_from_u64(5);
        let mut rng2 = ChaCha8Rng::seed_from_u64(5);
        let a = sample_triplet_batch(&view, 4, &mut rng1).unwrap();
        let b = sample_triplet_batch(&view, 4, &mut rng2).unwrap();
        assert_eq!(a.k(), 4);
        let ids_a: Vec<u64> = a.sample_ids().collect();
        let ids_b: Vec<u64> = b.sample_ids().collect();
        assert_eq!(ids_a, ids_b, "same rng state must give the same batch");
        // no duplicate indices within one split of a batch
        let mut xs: Vec<u64> = a.xs_r.iter().map(|s| s.sample_id).collect();
        xs.sort_unstable();
        xs.dedup();
        assert_eq!(xs.len(), 4);
    }

    #[test]
    fn triplet_sampling_exhaustive_when_k_equals_split_size() {
        let ds = tiny_dataset(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = sample_triplet_batch(&ds.train_view(), 2, &mut rng).unwrap();
        let mut ids: Vec<u64> = b.xs_ir.iter().map(|s| s.sample_id).collect();
        ids.sort_unstable();
        let mut expected: Vec<u64> = ds.split(SplitName::SourceIrt).iter().map(|s| s.sample_id).collect();
        expected.sort_unstable();
        assert_eq!(ids, expected);
    }

    #[test]
    fn triplet_sampling_rejects_undersized_split() {
        let ds = tiny_dataset(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_triplet_batch(&ds.train_view(), 4, &mut rng).is_err());
    }

    #[test]
    fn sampling_is_unbiased() {
        let ds = tiny_dataset(10);
        let view = ds.train_view();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut counts = [0usize; 10];
        let base = ds.split(SplitName::SourceToi)[0].sample_id;
        for _ in 0..10_000 {
            let b = sample_triplet_batch(&view, 2, &mut rng).unwrap();
            // use the first drawn index only, k=1 is below the minimum batch
            counts[(b.xs_r[0].sample_id - base) as usize] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let f = c as f64 / 10_000.0;
            assert!(
                (0.06..=0.14).contains(&f),
                "element {i} frequency {f} outside [0.06, 0.14]"
            );
        }
    }

    #[test]
    fn dataset_rejects_task_mismatch() {
        let spaces = LabelSpaces {
            toi_classes: vec!["a".into()],
            irt_classes: vec!["x".into()],
        };
        // an IRT-tagged sample in the source_toi split
        let bad = ZsdaDataset::<f64>::new(
            vec![dummy_image(0, TaskTag::Irt, 0, 0.1)],
            vec![dummy_image(0, TaskTag::Irt, 0, 0.1)],
            vec![dummy_image(0, TaskTag::Irt, 1, 0.1)],
            vec![dummy_image(0, TaskTag::Toi, 1, 0.1)],
            spaces,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn manifest_round_trip_and_rejections() {
        let dir = std::env::temp_dir().join(format!("zsda_data_test_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        let ds = tiny_dataset(3);
        save_dataset(&dir, &ds).unwrap();
        let loaded = load_manifest::<f64>(&dir).unwrap();
        assert_eq!(loaded.split(SplitName::SourceToi).len(), 3);
        assert_eq!(loaded.label_spaces(), ds.label_spaces());
        loaded.validate().unwrap();

        // corrupt one line: give a TOI sample an out-of-space class index
        let manifest = dir.join("source_toi.tsv");
        let text = std::fs::read_to_string(&manifest).unwrap();
        let bad = text.replacen("\t0\tTOI", "\t9\tTOI", 1);
        std::fs::write(&manifest, bad).unwrap();
        let err = load_manifest::<f64>(&dir).unwrap_err().to_string();
        assert!(
            err.contains("source_toi.tsv:1"),
            "diagnostic should name file and line, got: {err}"
        );

        // empty split file
        std::fs::write(&manifest, "").unwrap();
        assert!(load_manifest::<f64>(&dir).is_err());
        let _ = std::fs::remove_dir_all(&dir);
    }
}
