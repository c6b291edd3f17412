//! Quick desk run of one training variant on the synthetic glyph task.
//!
//! Usage: mini_run [iterations] [per_split] [variant]
//! where variant is one of full | no_dual_mixup | no_dual_contrastive |
//! source_only.

use zsda_core::eval::{evaluate, RunMetadata, Variant};
use zsda_core::model::ArchitectureConfig;
use zsda_core::synthetic::{build_synthetic_dataset, SyntheticDatasetConfig};
use zsda_core::train::{train, TrainConfig, TrainIo};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iters: usize = args.get(1).map_or(100, |s| s.parse().unwrap());
    let per_split: usize = args.get(2).map_or(500, |s| s.parse().unwrap());
    let variant = match args.get(3).map(String::as_str) {
        None | Some("full") => Variant::Full,
        Some("no_dual_mixup") => Variant::WithoutDualMixup,
        Some("no_dual_contrastive") => Variant::WithoutDualContrastive,
        Some("source_only") => Variant::SourceOnly,
        Some(other) => panic!("unknown variant {other}"),
    };

    let ds_cfg = SyntheticDatasetConfig {
        per_split,
        image_size: 16,
        seed: 0,
        ..SyntheticDatasetConfig::default()
    };
    let t0 = std::time::Instant::now();
    let ds = build_synthetic_dataset::<f32>(&ds_cfg).unwrap();
    eprintln!("dataset built in {:.2}s", t0.elapsed().as_secs_f64());

    let arch = ArchitectureConfig::small_cnn_compact((16, 16), (10, 10));
    let base = TrainConfig {
        total_iterations: iters,
        seed: 0,
        ..TrainConfig::default()
    };
    let cfg = variant.configure(&base);

    let t0 = std::time::Instant::now();
    let out = train(&ds, &arch, &cfg, &TrainIo::default()).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    eprintln!(
        "{} trained {iters} iterations in {dt:.1}s ({:.3} s/iter), {} params",
        variant.label(),
        dt / iters as f64,
        out.state.model.param_count()
    );
    for probe in [0, iters / 4, iters / 2, 3 * iters / 4, iters - 1] {
        let m = &out.state.metrics[probe];
        eprintln!(
            "  iter {probe:>5}: l_d {:>7.4} l_md {:>7.4} l_f {:>6.4} l_mf {:>6.4} l_con_d {:>6.4} l_con_f {:>6.4}",
            m.l_d, m.l_md, m.l_f, m.l_mf, m.l_con_d, m.l_con_f
        );
    }
    let res = evaluate(&out.state.model, ds.eval_split(), RunMetadata::default()).unwrap();
    println!(
        "{}\ttarget_toi_accuracy\t{:.4}\t(guard overlap {})",
        variant.label(),
        res.target_toi_accuracy,
        out.guard.eval_overlap
    );
}
