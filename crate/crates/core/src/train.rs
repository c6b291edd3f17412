//! The alternating two-step optimization.
//!
//! Each iteration draws one triplet batch and runs
//!
//! 1. the adversarial step: a single gradient step on the sum of the domain
//!    terms (plain and mixed) and the classification terms (plain and
//!    mixed), with the min/max realized in one backward pass by the gradient
//!    reversal layer between the trunk and the domain branch;
//! 2. the contrastive step: one shared mixing weight builds the A/B/C
//!    triplet, and a gradient step is taken on the sum of the two
//!    contrastive objectives (task branch aligns A with B, domain branch
//!    aligns B with C). The trunk also receives these gradients, unreversed;
//!    a config flag can freeze it here instead.
//!
//! One optimizer instance covers all parameters. The trainer operates on a
//! [`TrainView`], which cannot express the evaluation split; on top of that
//! a consumption guard records every sample id that entered a gradient step
//! so the isolation can be audited after the run.

use crate::data::{batch_to_nchw, pixels_to_nchw, sample_triplet_batch, TrainView, TripletBatch};
use crate::data::ZsdaDataset;
use crate::error::{Error, Result};
use crate::img::Pixels3;
use crate::loss::{
    contrastive_losses, domain_loss, mixed_domain_loss, mixed_task_loss, sigmoid, task_loss,
    ContrastiveConfig, LossReport,
};
use crate::mixup::{build_contrastive_triplet, mix_pixels, BetaSampler};
use crate::model::{
    build_model, save_checkpoint, ArchitectureConfig, GradientReversal, ModelBundle, RngState,
    TrainerState,
};
use crate::nn::Adam;
use crate::scalar::Scalar;
use ndarray::{concatenate, s, Array1, Array2, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;

/// Which loss terms are removed, for the ablation studies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AblationFlags {
    /// Drop the mixed-sample terms from the adversarial step.
    pub disable_dual_mixup: bool,
    /// Skip the contrastive step entirely.
    pub disable_contrastive: bool,
}

/// Training hyperparameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    /// Mini-batch size K per split.
    pub batch_k: usize,
    /// Number of alternation pairs (one adversarial + one contrastive step
    /// each).
    pub total_iterations: usize,
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate at the decay point.
    pub lr_decay_factor: f64,
    /// Fraction of total iterations after which the decay applies.
    pub lr_decay_at_fraction: f64,
    /// Beta(alpha, alpha) mixing-weight parameter.
    pub alpha: f64,
    /// Gradient reversal strength.
    pub grl_coefficient: f64,
    /// Ramp the reversal coefficient linearly from 0 to its value over the
    /// run instead of holding it constant.
    pub grl_linear_ramp: bool,
    /// Contrastive temperature.
    pub temperature: f64,
    /// Keep the positive pair in the contrastive denominator.
    pub include_positive_in_denominator: bool,
    /// Do not propagate contrastive gradients into the shared trunk.
    pub freeze_shared_during_contrastive: bool,
    pub seed: u64,
    pub ablation: AblationFlags,
    /// Write a checkpoint every this many iterations (besides the final one).
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_k: 64,
            total_iterations: 7000,
            learning_rate: 2e-4,
            lr_decay_factor: 0.1,
            lr_decay_at_fraction: 0.5,
            alpha: 1.0,
            grl_coefficient: 1.0,
            grl_linear_ramp: false,
            temperature: 0.5,
            include_positive_in_denominator: false,
            freeze_shared_during_contrastive: false,
            seed: 0,
            ablation: AblationFlags::default(),
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_k < 2 {
            return Err(Error::config("batch_k must be >= 2"));
        }
        if self.total_iterations < 1 {
            return Err(Error::config("total_iterations must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be > 0"));
        }
        if !(self.lr_decay_at_fraction > 0.0 && self.lr_decay_at_fraction <= 1.0) {
            return Err(Error::config("lr_decay_at_fraction must be in (0, 1]"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::config("alpha must be > 0"));
        }
        if self.grl_coefficient < 0.0 {
            return Err(Error::config("grl_coefficient must be >= 0"));
        }
        self.contrastive_config().validate()
    }

    pub fn contrastive_config(&self) -> ContrastiveConfig {
        ContrastiveConfig {
            temperature: self.temperature,
            batch_k: self.batch_k,
            include_positive_in_denominator: self.include_positive_in_denominator,
        }
    }

    /// Learning rate in effect at `iteration` (0-based): decays by
    /// `lr_decay_factor` from `floor(lr_decay_at_fraction * total)` onward.
    pub fn lr_at(&self, iteration: u64) -> f64 {
        let cut = (self.lr_decay_at_fraction * self.total_iterations as f64).floor() as u64;
        if iteration >= cut {
            self.learning_rate * self.lr_decay_factor
        } else {
            self.learning_rate
        }
    }

    /// Reversal coefficient in effect at `iteration`.
    pub fn grl_at(&self, iteration: u64) -> f64 {
        if self.grl_linear_ramp {
            self.grl_coefficient * (iteration as f64 / self.total_iterations.max(1) as f64)
        } else {
            self.grl_coefficient
        }
    }
}

/// Records which sample ids entered gradient steps.
#[derive(Debug, Clone, Default)]
pub struct ConsumptionGuard {
    ids: BTreeSet<u64>,
}

impl ConsumptionGuard {
    pub fn record<I: IntoIterator<Item = u64>>(&mut self, ids: I) {
        self.ids.extend(ids);
    }

    pub fn unique_consumed(&self) -> usize {
        self.ids.len()
    }

    pub fn overlap<I: IntoIterator<Item = u64>>(&self, eval_ids: I) -> usize {
        eval_ids.into_iter().filter(|id| self.ids.contains(id)).count()
    }
}

/// Mutable training state: model, optimizer, rng streams, metrics.
pub struct TrainState<F: Scalar> {
    pub iteration: u64,
    pub model: ModelBundle<F>,
    pub opt: Adam<F>,
    pub data_rng: ChaCha8Rng,
    pub mixup: BetaSampler,
    pub metrics: Vec<LossReport>,
    pub guard: ConsumptionGuard,
    /// Count of probability-clamp events in the domain losses.
    pub saturation_events: u64,
}

impl<F: Scalar> TrainState<F> {
    pub fn new(arch: &ArchitectureConfig, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = build_model::<F>(arch, cfg.seed)?;
        let opt = Adam::new(&model.params());
        let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        data_rng.set_stream(1);
        let mut mix_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        mix_rng.set_stream(2);
        Ok(Self {
            iteration: 0,
            model,
            opt,
            data_rng,
            mixup: BetaSampler::new(cfg.alpha, mix_rng)?,
            metrics: Vec::new(),
            guard: ConsumptionGuard::default(),
            saturation_events: 0,
        })
    }

    fn trainer_state(&self) -> TrainerState<F> {
        TrainerState {
            adam: self.opt.clone(),
            data_rng: RngState::capture(&self.data_rng),
            mixup_rng: RngState::capture(self.mixup.rng()),
        }
    }
}

fn rows4<F: Scalar>(a: &Array4<F>, lo: usize, hi: usize) -> Array4<F> {
    a.slice(s![lo..hi, .., .., ..]).to_owned()
}

fn rows2<F: Scalar>(a: &Array2<F>, lo: usize, hi: usize) -> Array2<F> {
    a.slice(s![lo..hi, ..]).to_owned()
}

/// Losses reported by the adversarial step.
#[derive(Debug, Clone, Copy)]
pub struct AdvStepLosses {
    pub l_d: f64,
    pub l_md: f64,
    pub l_f: f64,
    pub l_mf: f64,
    pub saturated: usize,
}

/// One gradient step on the adversarial objective
/// (domain + mixed-domain + task + mixed-task terms).
pub fn adversarial_step<F: Scalar>(
    state: &mut TrainState<F>,
    tb: &TripletBatch<'_, F>,
    cfg: &TrainConfig,
) -> Result<AdvStepLosses> {
    let k = tb.k();
    let with_mix = !cfg.ablation.disable_dual_mixup;
    let grl = GradientReversal::new(cfg.grl_at(state.iteration))?;

    // --- assemble input blocks -------------------------------------------
    let xr = batch_to_nchw(&tb.xs_r);
    let xsi = batch_to_nchw(&tb.xs_ir);
    let xti = batch_to_nchw(&tb.xt_ir);

    // mixed-domain block: left from the source pool, right the target rows
    let (md_block, md_lams) = if with_mix {
        let mut pixels: Vec<Pixels3<F>> = Vec::with_capacity(k);
        let mut lams = Array1::<F>::zeros(k);
        for i in 0..k {
            let li = state.mixup.rng_mut().gen_range(0..2 * k);
            let left = if li < k { tb.xs_r[li] } else { tb.xs_ir[li - k] };
            let lam = state.mixup.sample_lambda();
            lams[i] = F::from_f64(lam);
            pixels.push(mix_pixels(&left.pixels, &tb.xt_ir[i].pixels, F::from_f64(lam))?);
        }
        (Some(pixels_to_nchw(&pixels)), lams)
    } else {
        (None, Array1::zeros(0))
    };

    // mixed-task block: left the source-ToI rows, right from the IrT pool
    let (mf_block, mf_lams, mf_left, mf_right) = if with_mix {
        let mut pixels: Vec<Pixels3<F>> = Vec::with_capacity(k);
        let mut lams = Array1::<F>::zeros(k);
        let mut left_t = Vec::with_capacity(k);
        let mut right_t = Vec::with_capacity(k);
        for (i, xs_r_i) in tb.xs_r.iter().enumerate() {
            let ri = state.mixup.rng_mut().gen_range(0..2 * k);
            let right = if ri < k { tb.xs_ir[ri] } else { tb.xt_ir[ri - k] };
            let lam = state.mixup.sample_lambda();
            lams[i] = F::from_f64(lam);
            left_t.push(xs_r_i.class_index);
            right_t.push(right.class_index);
            pixels.push(mix_pixels(&xs_r_i.pixels, &right.pixels, F::from_f64(lam))?);
        }
        (Some(pixels_to_nchw(&pixels)), lams, left_t, right_t)
    } else {
        (None, Array1::zeros(0), Vec::new(), Vec::new())
    };

    // one trunk pass over everything: [xs_r | xs_ir | xt_ir | md | mf]
    let mut blocks: Vec<ndarray::ArrayView4<F>> = vec![xr.view(), xsi.view(), xti.view()];
    if let Some(md) = &md_block {
        blocks.push(md.view());
    }
    if let Some(mf) = &mf_block {
        blocks.push(mf.view());
    }
    let big = concatenate(Axis(0), &blocks).expect("uniform shapes");
    let n_unmixed = 3 * k;
    let n_domain = if with_mix { 4 * k } else { 3 * k };
    let n_total = big.dim().0;

    state.model.zero_grads();
    let (h, trunk_cache) = state.model.shared.forward_train(&big);

    // --- domain path: unmixed + md block ---------------------------------
    let domain_in = rows4(&h, 0, n_domain);
    let (ed, ed_cache) = state.model.domain_branch.forward_train(&domain_in);
    let (dz, dz_cache) = state.model.domain_head.forward(&ed);
    let probs = dz.column(0).mapv(sigmoid);
    let p_src = probs.slice(s![0..2 * k]).to_owned();
    let p_tgt = probs.slice(s![2 * k..3 * k]).to_owned();
    let d_out = domain_loss(&p_src, &p_tgt)?;
    let mut saturated = d_out.saturated;

    // discriminator minimizes the negated log-likelihood
    let mut dprobs = Array1::<F>::zeros(n_domain);
    for i in 0..2 * k {
        dprobs[i] = -d_out.grad_src[i];
    }
    for i in 0..k {
        dprobs[2 * k + i] = -d_out.grad_tgt[i];
    }
    let l_md = if with_mix {
        let p_md = probs.slice(s![3 * k..4 * k]).to_owned();
        let md_out = mixed_domain_loss(&p_md, &md_lams)?;
        saturated += md_out.saturated;
        for i in 0..k {
            dprobs[3 * k + i] = -md_out.grad[i];
        }
        md_out.value.to_f64()
    } else {
        0.0
    };

    // chain through the sigmoid
    let mut ddz = Array2::<F>::zeros((n_domain, 1));
    for i in 0..n_domain {
        ddz[[i, 0]] = dprobs[i] * probs[i] * (F::one() - probs[i]);
    }
    let ded = state.model.domain_head.backward(&dz_cache, &ddz);
    let dh_domain = state.model.domain_branch.backward(&ed_cache, &ded);

    // --- task path: unmixed + mf block -----------------------------------
    let task_in = if with_mix {
        let unmixed = rows4(&h, 0, n_unmixed);
        let mf = rows4(&h, 4 * k, 5 * k);
        concatenate(Axis(0), &[unmixed.view(), mf.view()]).unwrap()
    } else {
        rows4(&h, 0, n_unmixed)
    };
    let (ef, ef_cache) = state.model.task_branch.forward_train(&task_in);

    let ef_toi = rows2(&ef, 0, k);
    let ef_irt = rows2(&ef, k, 3 * k);
    let (toi_logits, toi_cache) = state.model.toi_head.forward(&ef_toi);
    let (irt_logits, irt_cache) = state.model.irt_head.forward(&ef_irt);
    let toi_targets: Vec<usize> = tb.xs_r.iter().map(|s| s.class_index).collect();
    let irt_targets: Vec<usize> = tb
        .xs_ir
        .iter()
        .chain(tb.xt_ir.iter())
        .map(|s| s.class_index)
        .collect();
    let f_out = task_loss(&toi_logits, &toi_targets, &irt_logits, &irt_targets)?;

    let mut def = Array2::<F>::zeros(ef.raw_dim());
    {
        let d = state.model.toi_head.backward(&toi_cache, &f_out.grad_toi);
        def.slice_mut(s![0..k, ..]).assign(&d);
        let d = state.model.irt_head.backward(&irt_cache, &f_out.grad_irt);
        def.slice_mut(s![k..3 * k, ..]).assign(&d);
    }

    let l_mf = if with_mix {
        let ef_mf = rows2(&ef, 3 * k, 4 * k);
        let (mtoi, mtoi_cache) = state.model.toi_head.forward(&ef_mf);
        let (mirt, mirt_cache) = state.model.irt_head.forward(&ef_mf);
        let mf_out = mixed_task_loss(&mtoi, &mirt, &mf_left, &mf_right, &mf_lams)?;
        let da = state.model.toi_head.backward(&mtoi_cache, &mf_out.grad_toi);
        let db = state.model.irt_head.backward(&mirt_cache, &mf_out.grad_irt);
        def.slice_mut(s![3 * k..4 * k, ..]).assign(&(da + db));
        mf_out.value.to_f64()
    } else {
        0.0
    };

    let dh_task = state.model.task_branch.backward(&ef_cache, &def);

    // --- assemble the trunk gradient --------------------------------------
    // domain-path gradients pass the reversal layer; task-path gradients do
    // not
    let reversed = grl.reverse(&dh_domain);
    let mut dh = Array4::<F>::zeros((n_total, h.dim().1, h.dim().2, h.dim().3));
    {
        let unmixed_dom = reversed.slice(s![0..n_unmixed, .., .., ..]);
        let unmixed_task = dh_task.slice(s![0..n_unmixed, .., .., ..]);
        let mut target = dh.slice_mut(s![0..n_unmixed, .., .., ..]);
        target.assign(&unmixed_dom);
        target += &unmixed_task;
    }
    if with_mix {
        dh.slice_mut(s![3 * k..4 * k, .., .., ..])
            .assign(&reversed.slice(s![3 * k..4 * k, .., .., ..]));
        dh.slice_mut(s![4 * k..5 * k, .., .., ..])
            .assign(&dh_task.slice(s![3 * k..4 * k, .., .., ..]));
    }
    state.model.shared.backward(&trunk_cache, &dh);

    let lr = cfg.lr_at(state.iteration);
    let mut params = state.model.params_mut();
    state.opt.step(&mut params, lr);

    state.saturation_events += saturated as u64;
    Ok(AdvStepLosses {
        l_d: d_out.value.to_f64(),
        l_md,
        l_f: f_out.value.to_f64(),
        l_mf,
        saturated,
    })
}

/// Losses reported by the contrastive step.
#[derive(Debug, Clone, Copy)]
pub struct ConStepLosses {
    pub l_con_d: f64,
    pub l_con_f: f64,
}

/// One gradient step on the two contrastive objectives with one shared
/// mixing weight. No-op when the ablation disables it.
pub fn contrastive_step<F: Scalar>(
    state: &mut TrainState<F>,
    tb: &TripletBatch<'_, F>,
    cfg: &TrainConfig,
) -> Result<ConStepLosses> {
    if cfg.ablation.disable_contrastive {
        return Ok(ConStepLosses {
            l_con_d: 0.0,
            l_con_f: 0.0,
        });
    }
    let k = tb.k();
    let lam = F::from_f64(state.mixup.sample_lambda());
    let trip = build_contrastive_triplet(tb, lam)?;

    let a = pixels_to_nchw(&trip.a);
    let b = pixels_to_nchw(&trip.b);
    let c = pixels_to_nchw(&trip.c);
    let big = concatenate(Axis(0), &[a.view(), b.view(), c.view()]).unwrap();

    state.model.zero_grads();
    let (h, trunk_cache) = state.model.shared.forward_train(&big);

    // task branch sees A and B; domain branch sees B and C
    let task_in = rows4(&h, 0, 2 * k);
    let (zf, zf_cache) = state.model.task_branch.forward_train(&task_in);
    let domain_in = rows4(&h, k, 3 * k);
    let (zd, zd_cache) = state.model.domain_branch.forward_train(&domain_in);

    let zf_a = rows2(&zf, 0, k);
    let zf_b = rows2(&zf, k, 2 * k);
    let zd_b = rows2(&zd, 0, k);
    let zd_c = rows2(&zd, k, 2 * k);
    let con = contrastive_losses(&zf_a, &zf_b, &zd_b, &zd_c, &cfg.contrastive_config())?;

    let mut dzf = Array2::<F>::zeros(zf.raw_dim());
    dzf.slice_mut(s![0..k, ..]).assign(&con.grad_zf_a);
    dzf.slice_mut(s![k..2 * k, ..]).assign(&con.grad_zf_b);
    let mut dzd = Array2::<F>::zeros(zd.raw_dim());
    dzd.slice_mut(s![0..k, ..]).assign(&con.grad_zd_b);
    dzd.slice_mut(s![k..2 * k, ..]).assign(&con.grad_zd_c);

    let dh_task = state.model.task_branch.backward(&zf_cache, &dzf);
    let dh_domain = state.model.domain_branch.backward(&zd_cache, &dzd);

    if !cfg.freeze_shared_during_contrastive {
        let mut dh = Array4::<F>::zeros(h.raw_dim());
        dh.slice_mut(s![0..k, .., .., ..])
            .assign(&dh_task.slice(s![0..k, .., .., ..]));
        {
            let mut b_rows = dh.slice_mut(s![k..2 * k, .., .., ..]);
            b_rows.assign(&dh_task.slice(s![k..2 * k, .., .., ..]));
            b_rows += &dh_domain.slice(s![0..k, .., .., ..]);
        }
        dh.slice_mut(s![2 * k..3 * k, .., .., ..])
            .assign(&dh_domain.slice(s![k..2 * k, .., .., ..]));
        state.model.shared.backward(&trunk_cache, &dh);
    }

    let lr = cfg.lr_at(state.iteration);
    let mut params = state.model.params_mut();
    state.opt.step(&mut params, lr);

    Ok(ConStepLosses {
        l_con_d: con.l_con_d.to_f64(),
        l_con_f: con.l_con_f.to_f64(),
    })
}

/// File outputs of a training run.
#[derive(Debug, Clone, Default)]
pub struct TrainIo {
    pub checkpoint_dir: Option<PathBuf>,
    pub metrics_path: Option<PathBuf>,
    pub resume_from: Option<PathBuf>,
}

/// Result of [`train`].
pub struct TrainOutcome<F: Scalar> {
    pub state: TrainState<F>,
    pub guard: GuardReport,
    pub final_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GuardReport {
    pub unique_consumed: usize,
    pub eval_overlap: usize,
}

fn metrics_line(iteration: u64, r: &LossReport) -> String {
    format!(
        "{iteration}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
        r.l_d, r.l_md, r.l_f, r.l_mf, r.l_con_d, r.l_con_f
    )
}

/// Run the full alternating optimization over a dataset.
///
/// The evaluation split never enters this function's data path: batches come
/// from the dataset's training view, and the guard report proves it.
pub fn train<F: Scalar>(
    dataset: &ZsdaDataset<F>,
    arch: &ArchitectureConfig,
    cfg: &TrainConfig,
    io: &TrainIo,
) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    let view: TrainView<'_, F> = dataset.train_view();

    let mut state = TrainState::<F>::new(arch, cfg)?;
    if let Some(resume) = &io.resume_from {
        let ckpt = crate::model::load_checkpoint::<F>(resume)?;
        if ckpt.model.arch != *arch {
            return Err(Error::Checkpoint(
                "checkpoint architecture does not match the requested one".into(),
            ));
        }
        let trainer = ckpt
            .trainer
            .ok_or_else(|| Error::Checkpoint("checkpoint lacks trainer state".into()))?;
        state.model = ckpt.model;
        state.opt = trainer.adam;
        state.data_rng = trainer.data_rng.restore();
        state.mixup = BetaSampler::new(cfg.alpha, trainer.mixup_rng.restore())?;
        state.iteration = ckpt.iteration;
    }

    let mut metrics_file = match &io.metrics_path {
        Some(p) => {
            if let Some(parent) = p.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            Some(std::io::BufWriter::new(std::fs::File::create(p)?))
        }
        None => None,
    };

    while state.iteration < cfg.total_iterations as u64 {
        let tb = sample_triplet_batch(&view, cfg.batch_k, &mut state.data_rng)?;
        state.guard.record(tb.sample_ids());

        let adv = adversarial_step(&mut state, &tb, cfg)?;
        let con = contrastive_step(&mut state, &tb, cfg)?;
        let report = LossReport::compose(adv.l_d, adv.l_md, adv.l_f, adv.l_mf, con.l_con_d, con.l_con_f);

        if !report.is_finite() {
            if let Some(dir) = &io.checkpoint_dir {
                let snap = dir.join(format!("abort_iter{:06}.ckpt", state.iteration));
                let _ = save_checkpoint(&snap, &state.model, state.iteration, Some(&state.trainer_state()));
            }
            return Err(Error::numeric(format!(
                "non-finite loss at iteration {}: {report:?}",
                state.iteration
            )));
        }

        if let Some(f) = metrics_file.as_mut() {
            f.write_all(metrics_line(state.iteration, &report).as_bytes())?;
        }
        state.metrics.push(report);
        state.iteration += 1;

        if let (Some(every), Some(dir)) = (cfg.checkpoint_every, &io.checkpoint_dir) {
            if every > 0
                && state.iteration % every as u64 == 0
                && state.iteration < cfg.total_iterations as u64
            {
                let path = dir.join(format!("iter{:06}.ckpt", state.iteration));
                save_checkpoint(&path, &state.model, state.iteration, Some(&state.trainer_state()))?;
            }
        }
    }

    if let Some(f) = metrics_file.as_mut() {
        f.flush()?;
    }

    let final_checkpoint = match &io.checkpoint_dir {
        Some(dir) => {
            let path = dir.join("final.ckpt");
            save_checkpoint(&path, &state.model, state.iteration, Some(&state.trainer_state()))?;
            Some(path)
        }
        None => None,
    };

    let guard = GuardReport {
        unique_consumed: state.guard.unique_consumed(),
        eval_overlap: state.guard.overlap(dataset.eval_sample_ids()),
    };
    Ok(TrainOutcome {
        state,
        guard,
        final_checkpoint,
    })
}
