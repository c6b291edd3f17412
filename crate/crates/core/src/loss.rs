//! Training objectives with analytic input gradients.
//!
//! Every operation returns its value together with the gradient of that
//! value with respect to its direct inputs (probabilities, logits or
//! embeddings); the trainer chains these through the network layers. Sign
//! conventions follow the objective definitions (the adversarial domain
//! terms are log-likelihoods the discriminator maximizes; the trainer
//! negates them for its minimization step).
//!
//! Log arguments are clamped to [1e-7, 1 - 1e-7]; clamp events are counted
//! and surfaced in training logs, and the gradient is zero in the clamped
//! (flat) region so analytic and finite-difference derivatives agree
//! everywhere.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use ndarray::{Array1, Array2};

/// Clamp bound for probabilities inside logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// Numerically stable logistic function.
pub fn sigmoid<F: Scalar>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// Named scalar values of one optimization iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossReport {
    pub l_d: f64,
    pub l_md: f64,
    pub l_f: f64,
    pub l_mf: f64,
    /// Sum of the four adversarial-step terms.
    pub l_adv: f64,
    pub l_con_d: f64,
    pub l_con_f: f64,
}

impl LossReport {
    pub fn compose(l_d: f64, l_md: f64, l_f: f64, l_mf: f64, l_con_d: f64, l_con_f: f64) -> Self {
        Self {
            l_d,
            l_md,
            l_f,
            l_mf,
            l_adv: l_d + l_md + l_f + l_mf,
            l_con_d,
            l_con_f,
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.l_d,
            self.l_md,
            self.l_f,
            self.l_mf,
            self.l_con_d,
            self.l_con_f,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Contrastive objective settings.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct ContrastiveConfig {
    /// Softmax temperature.
    pub temperature: f64,
    /// Mini-batch size K (at least 2; K = 1 leaves no negatives).
    pub batch_k: usize,
    /// When true, the positive pair joins the denominator (the convention of
    /// the framework the objective is borrowed from); when false, the
    /// denominator contains only the 2(K-1) negatives.
    pub include_positive_in_denominator: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            batch_k: 64,
            include_positive_in_denominator: false,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if self.batch_k < 2 {
            return Err(Error::config("contrastive batch needs K >= 2"));
        }
        Ok(())
    }
}

#[inline]
fn clamp_prob<F: Scalar>(p: F) -> (F, bool) {
    let lo = F::from_f64(PROB_EPS);
    let hi = F::one() - lo;
    if p < lo {
        (lo, true)
    } else if p > hi {
        (hi, true)
    } else {
        (p, false)
    }
}

/// Mean of `log(1 - p)` with clamping; returns (value, d value / d p,
/// saturation count).
fn mean_log_one_minus<F: Scalar>(probs: &Array1<F>) -> (F, Array1<F>, usize) {
    let n = F::from_f64(probs.len() as f64);
    let mut value = F::zero();
    let mut grad = Array1::zeros(probs.len());
    let mut saturated = 0;
    for (i, &p) in probs.iter().enumerate() {
        let (pc, sat) = clamp_prob(p);
        value = value + (F::one() - pc).ln();
        if sat {
            saturated += 1;
        } else {
            grad[i] = -(F::one() / (F::one() - pc)) / n;
        }
    }
    (value / n, grad, saturated)
}

/// Mean of `log p` with clamping; returns (value, d value / d p, count).
fn mean_log<F: Scalar>(probs: &Array1<F>) -> (F, Array1<F>, usize) {
    let n = F::from_f64(probs.len() as f64);
    let mut value = F::zero();
    let mut grad = Array1::zeros(probs.len());
    let mut saturated = 0;
    for (i, &p) in probs.iter().enumerate() {
        let (pc, sat) = clamp_prob(p);
        value = value + pc.ln();
        if sat {
            saturated += 1;
        } else {
            grad[i] = (F::one() / pc) / n;
        }
    }
    (value / n, grad, saturated)
}

#[derive(Debug, Clone)]
pub struct DomainLossOut<F: Scalar> {
    pub value: F,
    /// d value / d p over the source probabilities.
    pub grad_src: Array1<F>,
    /// d value / d p over the target probabilities.
    pub grad_tgt: Array1<F>,
    pub saturated: usize,
}

/// Discriminator log-likelihood: mean log(1 - p) over source plus
/// mean log(p) over target. Maximized by the domain branch; the shared trunk
/// minimizes it through the reversal layer.
pub fn domain_loss<F: Scalar>(
    probs_src: &Array1<F>,
    probs_tgt: &Array1<F>,
) -> Result<DomainLossOut<F>> {
    if probs_src.is_empty() || probs_tgt.is_empty() {
        return Err(Error::data("domain loss needs nonempty batches"));
    }
    let (vs, gs, sat_s) = mean_log_one_minus(probs_src);
    let (vt, gt, sat_t) = mean_log(probs_tgt);
    Ok(DomainLossOut {
        value: vs + vt,
        grad_src: gs,
        grad_tgt: gt,
        saturated: sat_s + sat_t,
    })
}

#[derive(Debug, Clone)]
pub struct MixedDomainLossOut<F: Scalar> {
    pub value: F,
    pub grad: Array1<F>,
    pub saturated: usize,
}

/// Mixed-sample discriminator term: mean over samples of
/// `lam * log(1 - p) + (1 - lam) * log(p)`, lam being each sample's mixing
/// weight toward the source operand.
pub fn mixed_domain_loss<F: Scalar>(
    probs: &Array1<F>,
    lams: &Array1<F>,
) -> Result<MixedDomainLossOut<F>> {
    if probs.len() != lams.len() {
        return Err(Error::shape(
            format!("{} lams", probs.len()),
            format!("{}", lams.len()),
        ));
    }
    if probs.is_empty() {
        return Err(Error::data("mixed domain loss needs a nonempty batch"));
    }
    let n = F::from_f64(probs.len() as f64);
    let mut value = F::zero();
    let mut grad = Array1::zeros(probs.len());
    let mut saturated = 0;
    for i in 0..probs.len() {
        let lam = lams[i];
        let (pc, sat) = clamp_prob(probs[i]);
        value = value + lam * (F::one() - pc).ln() + (F::one() - lam) * pc.ln();
        if sat {
            saturated += 1;
        } else {
            grad[i] = (-lam / (F::one() - pc) + (F::one() - lam) / pc) / n;
        }
    }
    Ok(MixedDomainLossOut {
        value: value / n,
        grad,
        saturated,
    })
}

/// Per-row cross entropy with softmax gradients. Returns (mean value,
/// d mean / d logits) where each row's gradient is weighted by `w_i / N`.
fn weighted_cross_entropy<F: Scalar>(
    logits: &Array2<F>,
    targets: &[usize],
    weights: Option<&Array1<F>>,
    denom: usize,
) -> Result<(F, Array2<F>)> {
    let (n, c) = logits.dim();
    if n != targets.len() {
        return Err(Error::shape(format!("{n} targets"), format!("{}", targets.len())));
    }
    let dn = F::from_f64(denom as f64);
    let mut value = F::zero();
    let mut grad = Array2::zeros((n, c));
    for i in 0..n {
        let t = targets[i];
        if t >= c {
            return Err(Error::data(format!(
                "target index {t} out of range for {c} classes (row {i})"
            )));
        }
        let row = logits.row(i);
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut z = F::zero();
        for &v in row.iter() {
            z = z + (v - max).exp();
        }
        let lse = max + z.ln();
        let ce = lse - row[t];
        let w = weights.map_or(F::one(), |ws| ws[i]);
        value = value + w * ce;
        let scale = w / dn;
        for j in 0..c {
            let softmax = (row[j] - lse).exp();
            let delta = if j == t { F::one() } else { F::zero() };
            grad[[i, j]] = scale * (softmax - delta);
        }
    }
    Ok((value / dn, grad))
}

#[derive(Debug, Clone)]
pub struct TaskLossOut<F: Scalar> {
    pub value: F,
    pub grad_toi: Array2<F>,
    pub grad_irt: Array2<F>,
}

/// Classification term: mean cross entropy of the task-of-interest head on
/// source ToI samples plus mean cross entropy of the irrelevant-task head on
/// the combined (source + target) IrT samples.
pub fn task_loss<F: Scalar>(
    toi_logits: &Array2<F>,
    toi_targets: &[usize],
    irt_logits: &Array2<F>,
    irt_targets: &[usize],
) -> Result<TaskLossOut<F>> {
    let (v1, g1) = weighted_cross_entropy(toi_logits, toi_targets, None, toi_targets.len())?;
    let (v2, g2) = weighted_cross_entropy(irt_logits, irt_targets, None, irt_targets.len())?;
    Ok(TaskLossOut {
        value: v1 + v2,
        grad_toi: g1,
        grad_irt: g2,
    })
}

/// Mixed classification term: mean over mixed samples of
/// `lam * ce(toi head, left target) + (1 - lam) * ce(irt head, right target)`.
/// Both logit matrices are evaluations of the two heads on the same mixed
/// pixels.
pub fn mixed_task_loss<F: Scalar>(
    mixed_toi_logits: &Array2<F>,
    mixed_irt_logits: &Array2<F>,
    left_targets: &[usize],
    right_targets: &[usize],
    lams: &Array1<F>,
) -> Result<TaskLossOut<F>> {
    let n = lams.len();
    if mixed_toi_logits.dim().0 != n || mixed_irt_logits.dim().0 != n {
        return Err(Error::shape(
            format!("{n} mixed rows"),
            format!(
                "{} toi rows / {} irt rows",
                mixed_toi_logits.dim().0,
                mixed_irt_logits.dim().0
            ),
        ));
    }
    let one_minus: Array1<F> = lams.mapv(|l| F::one() - l);
    let (v1, g1) = weighted_cross_entropy(mixed_toi_logits, left_targets, Some(lams), n)?;
    let (v2, g2) = weighted_cross_entropy(mixed_irt_logits, right_targets, Some(&one_minus), n)?;
    Ok(TaskLossOut {
        value: v1 + v2,
        grad_toi: g1,
        grad_irt: g2,
    })
}

#[derive(Debug, Clone)]
pub struct NtXentOut<F: Scalar> {
    pub value: F,
    pub grad_anchors: Array2<F>,
    pub grad_positives: Array2<F>,
}

/// Normalized temperature-scaled cross entropy over cosine similarities.
///
/// For each anchor i the positive is `positives[i]`; the denominator ranges
/// over the 2(K-1) same-batch entries with j != i drawn from both
/// collections, plus the positive itself iff the config says so.
pub fn nt_xent<F: Scalar>(
    anchors: &Array2<F>,
    positives: &Array2<F>,
    cfg: &ContrastiveConfig,
) -> Result<NtXentOut<F>> {
    cfg.validate()?;
    let (k, m) = anchors.dim();
    if positives.dim() != (k, m) {
        return Err(Error::shape(
            format!("{k}x{m} positives"),
            format!("{:?}", positives.dim()),
        ));
    }
    if k < 2 {
        return Err(Error::config("nt_xent needs K >= 2"));
    }
    let min_norm = F::from_f64(1e-12);
    let mut a_hat = anchors.clone();
    let mut a_norm = Array1::zeros(k);
    for (i, mut row) in a_hat.outer_iter_mut().enumerate() {
        let norm = row.iter().map(|v| *v * *v).sum::<F>().sqrt();
        if norm <= min_norm {
            return Err(Error::numeric(format!("anchor {i} has zero norm")));
        }
        a_norm[i] = norm;
        row.mapv_inplace(|v| v / norm);
    }
    let mut p_hat = positives.clone();
    let mut p_norm = Array1::zeros(k);
    for (i, mut row) in p_hat.outer_iter_mut().enumerate() {
        let norm = row.iter().map(|v| *v * *v).sum::<F>().sqrt();
        if norm <= min_norm {
            return Err(Error::numeric(format!("positive {i} has zero norm")));
        }
        p_norm[i] = norm;
        row.mapv_inplace(|v| v / norm);
    }

    let tau = F::from_f64(cfg.temperature);
    let s_uu = a_hat.dot(&a_hat.t()); // (k, k)
    let s_uv = a_hat.dot(&p_hat.t()); // (k, k); diagonal = positive sims

    // per-anchor log-sum-exp over the included denominator entries
    let mut value = F::zero();
    let mut p_uu = Array2::<F>::zeros((k, k));
    let mut p_uv = Array2::<F>::zeros((k, k));
    for i in 0..k {
        let mut max = F::neg_infinity();
        for j in 0..k {
            if j != i {
                max = max.max(s_uu[[i, j]] / tau);
                max = max.max(s_uv[[i, j]] / tau);
            } else if cfg.include_positive_in_denominator {
                max = max.max(s_uv[[i, i]] / tau);
            }
        }
        let mut z = F::zero();
        for j in 0..k {
            if j != i {
                z = z + (s_uu[[i, j]] / tau - max).exp();
                z = z + (s_uv[[i, j]] / tau - max).exp();
            } else if cfg.include_positive_in_denominator {
                z = z + (s_uv[[i, i]] / tau - max).exp();
            }
        }
        let lse = max + z.ln();
        value = value + (lse - s_uv[[i, i]] / tau);
        for j in 0..k {
            if j != i {
                p_uu[[i, j]] = (s_uu[[i, j]] / tau - lse).exp();
                p_uv[[i, j]] = (s_uv[[i, j]] / tau - lse).exp();
            } else if cfg.include_positive_in_denominator {
                p_uv[[i, i]] = (s_uv[[i, i]] / tau - lse).exp();
            }
        }
    }
    let k_f = F::from_f64(k as f64);
    value = value / k_f;

    // gradients with respect to the normalized rows
    let scale = F::one() / (k_f * tau);
    let mut d_a_hat = p_uu.dot(&a_hat) + p_uv.dot(&p_hat) + p_uu.t().dot(&a_hat) - &p_hat;
    d_a_hat.mapv_inplace(|v| v * scale);
    let mut d_p_hat = p_uv.t().dot(&a_hat) - &a_hat;
    d_p_hat.mapv_inplace(|v| v * scale);

    // chain through l2 normalization: d/du = (g - (g . u_hat) u_hat) / |u|
    let mut grad_anchors = Array2::zeros((k, m));
    let mut grad_positives = Array2::zeros((k, m));
    for i in 0..k {
        let u = a_hat.row(i);
        let g = d_a_hat.row(i);
        let dot = g.dot(&u);
        for j in 0..m {
            grad_anchors[[i, j]] = (g[j] - dot * u[j]) / a_norm[i];
        }
        let v = p_hat.row(i);
        let g = d_p_hat.row(i);
        let dot = g.dot(&v);
        for j in 0..m {
            grad_positives[[i, j]] = (g[j] - dot * v[j]) / p_norm[i];
        }
    }

    Ok(NtXentOut {
        value,
        grad_anchors,
        grad_positives,
    })
}

#[derive(Debug, Clone)]
pub struct ContrastiveOut<F: Scalar> {
    pub l_con_f: F,
    pub l_con_d: F,
    pub grad_zf_a: Array2<F>,
    pub grad_zf_b: Array2<F>,
    pub grad_zd_b: Array2<F>,
    pub grad_zd_c: Array2<F>,
}

/// Both contrastive objectives from the triplet embeddings: the task-branch
/// loss treats (A_i, B_i) as the positive pair, the domain-branch loss
/// treats (B_i, C_i).
pub fn contrastive_losses<F: Scalar>(
    zf_a: &Array2<F>,
    zf_b: &Array2<F>,
    zd_b: &Array2<F>,
    zd_c: &Array2<F>,
    cfg: &ContrastiveConfig,
) -> Result<ContrastiveOut<F>> {
    let f = nt_xent(zf_a, zf_b, cfg)?;
    let d = nt_xent(zd_b, zd_c, cfg)?;
    Ok(ContrastiveOut {
        l_con_f: f.value,
        l_con_d: d.value,
        grad_zf_a: f.grad_anchors,
        grad_zf_b: f.grad_positives,
        grad_zd_b: d.grad_anchors,
        grad_zd_c: d.grad_positives,
    })
}
