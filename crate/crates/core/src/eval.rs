//! Evaluation and analysis: target accuracy, the ablation matrix, feature
//! export for external visualization, and a quantitative disentanglement
//! proxy for the exported embeddings.

use crate::data::{batch_to_nchw, SplitName, TaskTag, ZsdaDataset};
use crate::error::{Error, Result};
use crate::model::{ArchitectureConfig, BranchSel, GradientReversal, ModelBundle};
use crate::scalar::Scalar;
use crate::train::{train, AblationFlags, GuardReport, TrainConfig, TrainIo};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// Provenance carried on evaluation results.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub config_digest: String,
    pub checkpoint_id: String,
}

/// FNV-1a digest of a serializable config, for run provenance.
pub fn config_digest<T: serde::Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).unwrap_or_default();
    let mut h: u64 = 0xcbf29ce484222325;
    for b in json.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

/// Accuracy summary over the held-out split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub target_toi_accuracy: f64,
    /// class index -> fraction correct among samples of that class.
    pub per_class_accuracy: BTreeMap<usize, f64>,
    pub n_samples: usize,
    pub run_metadata: RunMetadata,
}

/// Top-1 accuracy of the task-of-interest head on an evaluation split.
/// Prediction = argmax over the head's logits; deterministic and
/// permutation-invariant.
pub fn evaluate<F: Scalar>(
    model: &ModelBundle<F>,
    eval_split: &[crate::data::LabeledImage<F>],
    metadata: RunMetadata,
) -> Result<EvalResult> {
    if eval_split.is_empty() {
        return Err(Error::data("evaluation split is empty"));
    }
    let grl = GradientReversal::new(0.0).expect("valid coefficient");
    let mut correct_total = 0usize;
    let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new(); // class -> (correct, total)

    for chunk in eval_split.chunks(256) {
        let refs: Vec<&crate::data::LabeledImage<F>> = chunk.iter().collect();
        let batch = batch_to_nchw(&refs);
        let (toi_logits, _, _) = model.forward_all(&grl, &batch);
        for (row, sample) in toi_logits.outer_iter().zip(chunk) {
            let mut best = 0usize;
            let mut best_v = F::neg_infinity();
            for (j, &v) in row.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = j;
                }
            }
            let e = counts.entry(sample.class_index).or_insert((0, 0));
            e.1 += 1;
            if best == sample.class_index {
                e.0 += 1;
                correct_total += 1;
            }
        }
    }

    let n_samples = eval_split.len();
    debug_assert_eq!(counts.values().map(|(_, t)| t).sum::<usize>(), n_samples);
    Ok(EvalResult {
        target_toi_accuracy: correct_total as f64 / n_samples as f64,
        per_class_accuracy: counts
            .into_iter()
            .map(|(c, (good, total))| (c, good as f64 / total as f64))
            .collect(),
        n_samples,
        run_metadata: metadata,
    })
}

/// The four training variants of the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Variant {
    Full,
    WithoutDualMixup,
    WithoutDualContrastive,
    /// Classification heads only: reversal coefficient zero and both
    /// ablation flags set. Not part of the published matrix; it pins the
    /// no-adaptation floor.
    SourceOnly,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::WithoutDualMixup,
        Variant::WithoutDualContrastive,
        Variant::SourceOnly,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WithoutDualMixup => "no_dual_mixup",
            Variant::WithoutDualContrastive => "no_dual_contrastive",
            Variant::SourceOnly => "source_only",
        }
    }

    /// Apply this variant to a base configuration.
    pub fn configure(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Full => {}
            Variant::WithoutDualMixup => {
                cfg.ablation.disable_dual_mixup = true;
            }
            Variant::WithoutDualContrastive => {
                cfg.ablation.disable_contrastive = true;
            }
            Variant::SourceOnly => {
                cfg.grl_coefficient = 0.0;
                cfg.ablation = AblationFlags {
                    disable_dual_mixup: true,
                    disable_contrastive: true,
                };
            }
        }
        cfg
    }
}

/// One trained-and-evaluated cell of the ablation matrix.
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub result: EvalResult,
    pub guard: GuardReport,
    /// Per-iteration losses of this run.
    pub metrics: Vec<crate::loss::LossReport>,
}

pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Mean accuracy per variant.
    pub fn variant_means(&self) -> BTreeMap<&'static str, f64> {
        let mut acc: BTreeMap<&'static str, (f64, usize)> = BTreeMap::new();
        for row in &self.rows {
            let e = acc.entry(row.variant.label()).or_insert((0.0, 0));
            e.0 += row.result.target_toi_accuracy;
            e.1 += 1;
        }
        acc.into_iter()
            .map(|(k, (s, n))| (k, s / n as f64))
            .collect()
    }

    pub fn mean_of(&self, variant: Variant) -> f64 {
        let xs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.variant == variant)
            .map(|r| r.result.target_toi_accuracy)
            .collect();
        xs.iter().sum::<f64>() / xs.len().max(1) as f64
    }

    /// Machine-readable table: `variant<TAB>seed<TAB>accuracy` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.6}",
                row.variant.label(),
                row.seed,
                row.result.target_toi_accuracy
            );
        }
        out
    }

    /// Human-readable summary with per-variant means.
    pub fn render_summary(&self) -> String {
        let mut out = String::from("variant                mean_accuracy  runs\n");
        for v in Variant::ALL {
            let runs: Vec<&AblationRow> = self.rows.iter().filter(|r| r.variant == v).collect();
            if runs.is_empty() {
                continue;
            }
            let mean = runs
                .iter()
                .map(|r| r.result.target_toi_accuracy)
                .sum::<f64>()
                / runs.len() as f64;
            let _ = writeln!(out, "{:<22} {:>12.4}  {:>4}", v.label(), mean, runs.len());
        }
        out
    }
}

/// Train and evaluate every variant under each of `n_seeds` seeds
/// (run seed = base seed + index). Runs execute in parallel; each run is
/// single-threaded and internally deterministic.
pub fn run_ablation_matrix<F: Scalar>(
    dataset: &ZsdaDataset<F>,
    arch: &ArchitectureConfig,
    base_cfg: &TrainConfig,
    n_seeds: u64,
) -> Result<AblationTable> {
    if n_seeds == 0 {
        return Err(Error::config("n_seeds must be >= 1"));
    }
    let jobs: Vec<(Variant, u64)> = Variant::ALL
        .iter()
        .flat_map(|&v| (0..n_seeds).map(move |s| (v, base_cfg.seed + s)))
        .collect();

    let rows: Result<Vec<AblationRow>> = jobs
        .par_iter()
        .map(|&(variant, seed)| {
            let mut cfg = variant.configure(base_cfg);
            cfg.seed = seed;
            let outcome = train(dataset, arch, &cfg, &TrainIo::default()).map_err(|e| {
                Error::data(format!("variant {} seed {seed}: {e}", variant.label()))
            })?;
            let meta = RunMetadata {
                seed,
                config_digest: config_digest(&cfg),
                checkpoint_id: format!("{}-seed{}", variant.label(), seed),
            };
            let result = evaluate(&outcome.state.model, dataset.eval_split(), meta)?;
            Ok(AblationRow {
                variant,
                seed,
                result,
                guard: outcome.guard,
                metrics: outcome.state.metrics,
            })
        })
        .collect();
    Ok(AblationTable { rows: rows? })
}

// ---------------------------------------------------------------------------
// Feature export
// ---------------------------------------------------------------------------

/// One exported embedding row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub embedding: Vec<f64>,
    pub task: TaskTag,
    pub domain_label: u8,
    pub class_index: usize,
    pub split: &'static str,
}

/// Embeddings plus the metadata needed to reproduce both colorings of the
/// feature-space picture (by domain, by task).
#[derive(Debug, Clone)]
pub struct FeatureDump {
    pub rows: Vec<FeatureRow>,
    pub embedding_source: BranchSel,
    pub dim: usize,
}

/// Extract embeddings from one branch for `samples_per_split` random samples
/// of each of the four splits. Deterministic under `seed`.
pub fn export_features<F: Scalar>(
    model: &ModelBundle<F>,
    dataset: &ZsdaDataset<F>,
    source: BranchSel,
    samples_per_split: usize,
    seed: u64,
) -> Result<FeatureDump> {
    let mut rows = Vec::new();
    let mut dim = 0usize;
    for (stream, name) in SplitName::ALL.iter().enumerate() {
        let split = dataset.split(*name);
        if split.len() < samples_per_split {
            return Err(Error::data(format!(
                "split {name} has {} samples, need {samples_per_split}",
                split.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream as u64 + 1);
        let idx = rand::seq::index::sample(&mut rng, split.len(), samples_per_split);
        let picked: Vec<&crate::data::LabeledImage<F>> = idx.iter().map(|i| &split[i]).collect();
        for chunk in picked.chunks(256) {
            let batch = batch_to_nchw(chunk);
            let emb = model.embed_eval(source, &batch);
            dim = emb.dim().1;
            for (e, s) in emb.outer_iter().zip(chunk.iter()) {
                rows.push(FeatureRow {
                    embedding: e.iter().map(|v| Scalar::to_f64(*v)).collect(),
                    task: s.task,
                    domain_label: s.domain_label,
                    class_index: s.class_index,
                    split: name.file_stem(),
                });
            }
        }
    }
    Ok(FeatureDump {
        rows,
        embedding_source: source,
        dim,
    })
}

/// Write a dump as CSV: `dim_0,...,dim_{m-1},task,domain,class,split`.
pub fn write_feature_dump(path: &Path, dump: &FeatureDump) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut out = String::new();
    for d in 0..dump.dim {
        let _ = write!(out, "dim_{d},");
    }
    out.push_str("task,domain,class,split\n");
    for row in &dump.rows {
        for v in &row.embedding {
            let _ = write!(out, "{v:.8e},");
        }
        let _ = writeln!(
            out,
            "{},{},{},{}",
            row.task, row.domain_label, row.class_index, row.split
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a dump written by [`write_feature_dump`].
pub fn read_feature_dump(path: &Path, source: BranchSel) -> Result<FeatureDump> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::data("empty feature dump"))?;
    let dim = header.split(',').filter(|c| c.starts_with("dim_")).count();
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 4 {
            return Err(Error::data(format!(
                "feature dump line {}: expected {} fields, got {}",
                lineno + 2,
                dim + 4,
                fields.len()
            )));
        }
        let embedding: Vec<f64> = fields[..dim]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::data(format!("feature dump line {}: {e}", lineno + 2)))?;
        let split: &'static str = match fields[dim + 3] {
            "source_toi" => "source_toi",
            "source_irt" => "source_irt",
            "target_irt" => "target_irt",
            "target_toi_eval" => "target_toi_eval",
            other => return Err(Error::data(format!("unknown split {other:?}"))),
        };
        rows.push(FeatureRow {
            embedding,
            task: TaskTag::parse(fields[dim])?,
            domain_label: fields[dim + 1]
                .parse::<u8>()
                .map_err(|e| Error::data(e.to_string()))?,
            class_index: fields[dim + 2]
                .parse::<usize>()
                .map_err(|e| Error::data(e.to_string()))?,
            split,
        });
    }
    Ok(FeatureDump {
        rows,
        embedding_source: source,
        dim,
    })
}

// ---------------------------------------------------------------------------
// Disentanglement scoring
// ---------------------------------------------------------------------------

/// Quantitative proxy for the feature-space pictures.
///
/// `domain_alignment` = 1 - mean over tasks of the cosine distance between
/// the source-split and target-split embedding centroids within that task
/// (1 = source and target distributions coincide directionally).
///
/// `task_separation` = (between-task mean pairwise cosine distance -
/// within-task mean pairwise cosine distance) / max of the two, a
/// silhouette-style ratio in [-1, 1] (1 = tasks fully separated).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisentanglementScore {
    pub domain_alignment: f64,
    pub task_separation: f64,
    /// Set when all pairwise distances vanish (collapsed embeddings); the
    /// separation is reported as 0 in that case.
    pub degenerate: bool,
}

fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        // identical zero centroids count as aligned; a zero vs nonzero pair
        // has no direction to compare
        return if na < 1e-12 && nb < 1e-12 { 1.0 } else { 0.0 };
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Compute both scores from a dump containing both domains and both tasks.
pub fn disentanglement_score(dump: &FeatureDump) -> Result<DisentanglementScore> {
    let tasks: Vec<TaskTag> = {
        let mut t: Vec<TaskTag> = dump.rows.iter().map(|r| r.task).collect();
        t.sort_by_key(|t| matches!(t, TaskTag::Irt));
        t.dedup();
        t
    };
    let domains: Vec<u8> = {
        let mut d: Vec<u8> = dump.rows.iter().map(|r| r.domain_label).collect();
        d.sort_unstable();
        d.dedup();
        d
    };
    if tasks.len() < 2 || domains.len() < 2 {
        return Err(Error::data(
            "disentanglement needs both tasks and both domains in the dump",
        ));
    }

    // domain alignment: per-task centroid comparison across domains
    let mut align_acc = 0.0;
    for &task in &tasks {
        let centroid = |domain: u8| -> Vec<f64> {
            let mut c = vec![0.0; dump.dim];
            let mut n = 0usize;
            for r in dump.rows.iter().filter(|r| r.task == task && r.domain_label == domain) {
                for (ci, v) in c.iter_mut().zip(&r.embedding) {
                    *ci += v;
                }
                n += 1;
            }
            if n > 0 {
                for ci in c.iter_mut() {
                    *ci /= n as f64;
                }
            }
            c
        };
        let cs = centroid(0);
        let ct = centroid(1);
        let cos_dist = 1.0 - cosine_similarity(&cs, &ct);
        align_acc += cos_dist;
    }
    let domain_alignment = 1.0 - align_acc / tasks.len() as f64;

    // task separation: mean pairwise cosine distances within vs between
    let mut within = (0.0f64, 0usize);
    let mut between = (0.0f64, 0usize);
    let n = dump.rows.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = 1.0 - cosine_similarity(&dump.rows[i].embedding, &dump.rows[j].embedding);
            if dump.rows[i].task == dump.rows[j].task {
                within.0 += d;
                within.1 += 1;
            } else {
                between.0 += d;
                between.1 += 1;
            }
        }
    }
    if within.1 == 0 || between.1 == 0 {
        return Err(Error::data("degenerate dump: missing within- or between-task pairs"));
    }
    let a = within.0 / within.1 as f64;
    let b = between.0 / between.1 as f64;
    let (task_separation, degenerate) = if a.max(b) < 1e-12 {
        (0.0, true)
    } else {
        ((b - a) / a.max(b), false)
    };

    Ok(DisentanglementScore {
        domain_alignment,
        task_separation,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LabelSpaces, LabeledImage, ZsdaDataset};
    use crate::model::{build_model, Backbone};
    use ndarray::Array3;

    fn tiny_arch() -> ArchitectureConfig {
        ArchitectureConfig {
            backbone: Backbone::SmallCnn,
            conv_channels_g: vec![2, 3, 3],
            conv_channels_branch: vec![3, 4, 16],
            embedding_dims: (16, 16),
            input_shape: (8, 8, 3),
            head_class_counts: (10, 3),
        }
    }

    fn noise_image(seed: u64, class: usize, task: TaskTag, domain: u8) -> LabeledImage<f64> {
        let pixels = Array3::from_shape_fn((8, 8, 3), |(i, j, c)| {
            ((i as u64 * 31 + j as u64 * 17 + c as u64 * 511 + seed * 131) % 251) as f64 / 250.0
        });
        LabeledImage {
            pixels,
            class_index: class,
            task,
            domain_label: domain,
            sample_id: 0,
        }
    }

    fn noise_dataset(n_eval: usize, n_train: usize) -> ZsdaDataset<f64> {
        let mk = |n: usize, task, domain: u8, classes: usize, salt: u64| {
            (0..n)
                .map(|i| noise_image(i as u64 * 7919 + salt, i % classes, task, domain))
                .collect::<Vec<_>>()
        };
        ZsdaDataset::new(
            mk(n_train, TaskTag::Toi, 0, 10, 1),
            mk(n_train, TaskTag::Irt, 0, 3, 2),
            mk(n_train, TaskTag::Irt, 1, 3, 3),
            mk(n_eval, TaskTag::Toi, 1, 10, 4),
            LabelSpaces {
                toi_classes: (0..10).map(|i| format!("t{i}")).collect(),
                irt_classes: vec!["i0".into(), "i1".into(), "i2".into()],
            },
        )
        .unwrap()
    }

    #[test]
    fn evaluate_scores_perfect_predictions_as_one() {
        // label each eval sample with whatever the model predicts; accuracy
        // is then exactly 1
        let model = build_model::<f64>(&tiny_arch(), 0).unwrap();
        let ds = noise_dataset(20, 4);
        let grl = GradientReversal::new(0.0).unwrap();
        let mut relabeled: Vec<LabeledImage<f64>> = ds.eval_split().to_vec();
        for s in relabeled.iter_mut() {
            let refs = [&*s];
            let batch = batch_to_nchw(&refs);
            let (logits, _, _) = model.forward_all(&grl, &batch);
            let mut best = 0;
            for (j, &v) in logits.row(0).iter().enumerate() {
                if v > logits[[0, best]] {
                    best = j;
                }
            }
            s.class_index = best;
        }
        let res = evaluate(&model, &relabeled, RunMetadata::default()).unwrap();
        assert_eq!(res.target_toi_accuracy, 1.0);
        assert_eq!(res.n_samples, 20);
    }

    #[test]
    fn evaluate_random_labels_concentrate_at_chance() {
        // labels independent of pixels: accuracy concentrates at 1/10
        // regardless of what the model has learned
        let model = build_model::<f64>(&tiny_arch(), 1).unwrap();
        let eval: Vec<LabeledImage<f64>> = (0..10_000)
            .map(|i| noise_image(i as u64, (i as u64 * 2654435761 % 10) as usize, TaskTag::Toi, 1))
            .collect();
        let res = evaluate(&model, &eval, RunMetadata::default()).unwrap();
        assert!(
            (0.08..=0.12).contains(&res.target_toi_accuracy),
            "chance-level accuracy expected, got {}",
            res.target_toi_accuracy
        );
        let total: f64 = res
            .per_class_accuracy
            .iter()
            .map(|(_, &a)| a)
            .sum::<f64>();
        assert!(total.is_finite());
    }

    #[test]
    fn evaluate_is_permutation_invariant() {
        let model = build_model::<f64>(&tiny_arch(), 2).unwrap();
        let ds = noise_dataset(30, 4);
        let a = evaluate(&model, ds.eval_split(), RunMetadata::default()).unwrap();
        let mut shuffled = ds.eval_split().to_vec();
        shuffled.reverse();
        shuffled.swap(0, 7);
        let b = evaluate(&model, &shuffled, RunMetadata::default()).unwrap();
        assert_eq!(a.target_toi_accuracy, b.target_toi_accuracy);
        assert_eq!(a.per_class_accuracy, b.per_class_accuracy);
    }

    #[test]
    fn ablation_matrix_has_expected_cardinality_and_contracts() {
        let ds = crate::train::tests::tiny_dataset(6, 9);
        let arch = ArchitectureConfig {
            head_class_counts: (2, 3),
            ..tiny_arch()
        };
        let cfg = TrainConfig {
            batch_k: 4,
            total_iterations: 2,
            seed: 3,
            ..TrainConfig::default()
        };
        let table = run_ablation_matrix(&ds, &arch, &cfg, 3).unwrap();
        assert_eq!(table.rows.len(), 12, "4 variants x 3 seeds");
        for row in &table.rows {
            assert_eq!(row.guard.eval_overlap, 0);
            if row.variant == Variant::WithoutDualContrastive || row.variant == Variant::SourceOnly
            {
                assert!(
                    row.metrics
                        .iter()
                        .all(|m| m.l_con_d == 0.0 && m.l_con_f == 0.0),
                    "contrastive losses must be zero for {}",
                    row.variant.label()
                );
            }
        }
        let tsv = table.to_tsv();
        assert_eq!(tsv.lines().count(), 12);
        assert!(tsv.lines().all(|l| l.split('\t').count() == 3));
        let summary = table.render_summary();
        assert!(summary.contains("full") && summary.contains("source_only"));
    }

    #[test]
    fn export_features_shapes_and_determinism() {
        let model = build_model::<f64>(&tiny_arch(), 5).unwrap();
        let ds = noise_dataset(12, 12);
        let dump = export_features(&model, &ds, BranchSel::Task, 10, 4).unwrap();
        assert_eq!(dump.rows.len(), 40, "4 splits x 10 rows");
        assert_eq!(dump.dim, 16);
        let again = export_features(&model, &ds, BranchSel::Task, 10, 4).unwrap();
        assert_eq!(dump.rows, again.rows, "same seed, same rows");
        let other = export_features(&model, &ds, BranchSel::Domain, 10, 4).unwrap();
        assert_eq!(other.dim, 16);
        assert!(export_features(&model, &ds, BranchSel::Task, 100, 0).is_err());
    }

    #[test]
    fn feature_dump_round_trips_within_precision() {
        let model = build_model::<f64>(&tiny_arch(), 6).unwrap();
        let ds = noise_dataset(8, 8);
        let dump = export_features(&model, &ds, BranchSel::Domain, 6, 1).unwrap();
        let dir = std::env::temp_dir().join(format!("zsda_dump_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("features.csv");
        write_feature_dump(&path, &dump).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("dim_0,"));
        assert!(text.lines().next().unwrap().ends_with("task,domain,class,split"));
        let loaded = read_feature_dump(&path, BranchSel::Domain).unwrap();
        assert_eq!(loaded.rows.len(), dump.rows.len());
        for (a, b) in dump.rows.iter().zip(&loaded.rows) {
            assert_eq!(a.task, b.task);
            assert_eq!(a.split, b.split);
            for (x, y) in a.embedding.iter().zip(&b.embedding) {
                let rel = (x - y).abs() / x.abs().max(1e-12);
                assert!(rel < 1e-6, "round-trip precision: {x} vs {y}");
            }
        }
        let _ = std::fs::remove_dir_all(&dir);
    }

    fn dump_from(rows: Vec<FeatureRow>, dim: usize) -> FeatureDump {
        FeatureDump {
            rows,
            embedding_source: BranchSel::Task,
            dim,
        }
    }

    fn frow(e: Vec<f64>, task: TaskTag, domain: u8) -> FeatureRow {
        FeatureRow {
            embedding: e,
            task,
            domain_label: domain,
            class_index: 0,
            split: "source_toi",
        }
    }

    #[test]
    fn disentanglement_collapsed_case() {
        // all embeddings identical: alignment 1, separation degenerate 0
        let e = vec![0.5, -0.5, 1.0];
        let rows = vec![
            frow(e.clone(), TaskTag::Toi, 0),
            frow(e.clone(), TaskTag::Toi, 1),
            frow(e.clone(), TaskTag::Irt, 0),
            frow(e.clone(), TaskTag::Irt, 1),
        ];
        let s = disentanglement_score(&dump_from(rows, 3)).unwrap();
        assert!((s.domain_alignment - 1.0).abs() < 1e-12);
        assert_eq!(s.task_separation, 0.0);
        assert!(s.degenerate);
    }

    #[test]
    fn disentanglement_antipodal_tasks() {
        // tasks on antipodal unit vectors, domains coincident: separation at
        // its maximum, alignment 1
        let rows = vec![
            frow(vec![1.0, 0.0], TaskTag::Toi, 0),
            frow(vec![1.0, 0.0], TaskTag::Toi, 1),
            frow(vec![-1.0, 0.0], TaskTag::Irt, 0),
            frow(vec![-1.0, 0.0], TaskTag::Irt, 1),
        ];
        let s = disentanglement_score(&dump_from(rows, 2)).unwrap();
        assert!((s.domain_alignment - 1.0).abs() < 1e-12);
        assert!((s.task_separation - 1.0).abs() < 1e-12);
        assert!(!s.degenerate);
    }

    #[test]
    fn disentanglement_rotation_invariance() {
        // rotate every embedding by the same 2-d rotation: scores unchanged
        let base = [
            (vec![0.9, 0.1], TaskTag::Toi, 0u8),
            (vec![0.8, 0.3], TaskTag::Toi, 1),
            (vec![-0.2, 0.9], TaskTag::Irt, 0),
            (vec![-0.3, 0.8], TaskTag::Irt, 1),
            (vec![0.7, -0.1], TaskTag::Toi, 0),
            (vec![-0.1, 1.1], TaskTag::Irt, 1),
        ];
        let rows: Vec<FeatureRow> = base
            .iter()
            .map(|(e, t, d)| frow(e.clone(), *t, *d))
            .collect();
        let s1 = disentanglement_score(&dump_from(rows, 2)).unwrap();
        let th = 1.1f64;
        let rot: Vec<FeatureRow> = base
            .iter()
            .map(|(e, t, d)| {
                frow(
                    vec![
                        e[0] * th.cos() - e[1] * th.sin(),
                        e[0] * th.sin() + e[1] * th.cos(),
                    ],
                    *t,
                    *d,
                )
            })
            .collect();
        let s2 = disentanglement_score(&dump_from(rot, 2)).unwrap();
        assert!((s1.domain_alignment - s2.domain_alignment).abs() < 1e-9);
        assert!((s1.task_separation - s2.task_separation).abs() < 1e-9);
    }

    #[test]
    fn disentanglement_rejects_single_task_or_domain() {
        let rows = vec![
            frow(vec![1.0, 0.0], TaskTag::Toi, 0),
            frow(vec![0.9, 0.1], TaskTag::Toi, 1),
        ];
        assert!(disentanglement_score(&dump_from(rows, 2)).is_err());
    }
}
