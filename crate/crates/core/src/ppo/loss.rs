use serde::{Deserialize, Serialize};

use super::record::TrainingRecord;
use crate::error::Result;
use crate::policy::{GradVector, PolicyParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub clip_eps: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    /// Standardize advantages over the records passed in one call.
    pub normalize_advantages: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            clip_eps: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            normalize_advantages: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LossOutput {
    /// Mean per-record loss.
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Fraction of records whose surrogate sits in the clipped region.
    pub clip_fraction: f64,
    /// Gradient of `loss`.
    pub grad: GradVector,
    /// ∇ℓᵢ for each record, when requested; their mean is `grad`.
    pub per_record: Option<Vec<GradVector>>,
}

/// Advantages as used by the loss: standardized when configured and there is
/// more than one record.
pub fn effective_advantages(records: &[TrainingRecord], normalize: bool) -> Vec<f64> {
    let adv: Vec<f64> = records.iter().map(|r| r.advantage).collect();
    if !normalize || adv.len() < 2 {
        return adv;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// Per-record loss
/// ℓ = −min(ρA, clip(ρ, 1−ε, 1+ε)A) + c_v (V − R)² − c_e H(π(·|o)),
/// with ρ = π(a|o) / π_old(a|o); returns (loss, policy, value, entropy, clipped).
fn record_terms(params: &PolicyParams, r: &TrainingRecord, adv: f64, cfg: &LossConfig) -> (f64, f64, f64, f64, bool) {
    let out = params.forward(&r.obs);
    let ratio = (out.log_probs[r.action] - r.log_prob_old).exp();
    let clipped_ratio = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    let surrogate = (ratio * adv).min(clipped_ratio * adv);
    let value = (out.value - r.return_to_go).powi(2);
    let entropy = out.entropy();
    let clipped = is_clipped(ratio, adv, cfg.clip_eps);
    (
        -surrogate + cfg.value_coef * value - cfg.entropy_coef * entropy,
        -surrogate,
        value,
        entropy,
        clipped,
    )
}

fn is_clipped(ratio: f64, adv: f64, eps: f64) -> bool {
    (adv > 0.0 && ratio > 1.0 + eps) || (adv < 0.0 && ratio < 1.0 - eps)
}

/// Loss of each record on its own (no normalization across records unless
/// configured, in which case it spans the given slice).
pub fn record_losses(params: &PolicyParams, records: &[TrainingRecord], cfg: &LossConfig) -> Vec<f64> {
    let adv = effective_advantages(records, cfg.normalize_advantages);
    records
        .iter()
        .zip(adv)
        .map(|(r, a)| record_terms(params, r, a, cfg).0)
        .collect()
}

/// Mean PPO loss over `records` with its exact gradient.
pub fn ppo_loss_grad(
    params: &PolicyParams,
    records: &[TrainingRecord],
    cfg: &LossConfig,
    per_record: bool,
) -> Result<LossOutput> {
    if records.is_empty() {
        return Err(crate::Error::Contract("loss over an empty minibatch".into()));
    }
    let n = records.len() as f64;
    let adv = effective_advantages(records, cfg.normalize_advantages);
    let mut grad = GradVector::zeros(params.len());
    let mut per = per_record.then(|| Vec::with_capacity(records.len()));
    let (mut loss, mut pl, mut vl, mut ent, mut clipped) = (0.0, 0.0, 0.0, 0.0, 0usize);
    let mut scratch = vec![0.0; params.len()];
    for (r, &a) in records.iter().zip(&adv) {
        let cache = params.forward_input(&r.obs.flat());
        let out = &cache.output;
        let ratio = (out.log_probs[r.action] - r.log_prob_old).exp();
        let clip = is_clipped(ratio, a, cfg.clip_eps);
        let clipped_ratio = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
        let surrogate = (ratio * a).min(clipped_ratio * a);
        let h = out.entropy();
        let verr = out.value - r.return_to_go;

        // ∂ℓ/∂logit_j
        let d_logp = if clip { 0.0 } else { -ratio * a };
        let d_logits: Vec<f64> = (0..out.logits.len())
            .map(|j| {
                let delta = if j == r.action { 1.0 } else { 0.0 };
                let pj = out.action_probs[j];
                let d_ent = if pj > 0.0 { -pj * (out.log_probs[j] + h) } else { 0.0 };
                d_logp * (delta - pj) - cfg.entropy_coef * d_ent
            })
            .collect();
        let d_value = 2.0 * cfg.value_coef * verr;

        scratch.iter_mut().for_each(|x| *x = 0.0);
        params.backward(&cache, &d_logits, d_value, &mut scratch);
        grad.as_mut_slice()
            .iter_mut()
            .zip(&scratch)
            .for_each(|(g, s)| *g += s / n);
        if let Some(per) = per.as_mut() {
            per.push(GradVector::from_vec(scratch.clone()));
        }

        loss += -surrogate + cfg.value_coef * verr * verr - cfg.entropy_coef * h;
        pl += -surrogate;
        vl += verr * verr;
        ent += h;
        clipped += clip as usize;
    }
    Ok(LossOutput {
        loss: loss / n,
        policy_loss: pl / n,
        value_loss: vl / n,
        entropy: ent / n,
        clip_fraction: clipped as f64 / n,
        grad,
        per_record: per,
    })
}
