use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::BehaviorMeasure;
use crate::policy::PolicyParams;
use crate::ppo::{effective_advantages, ppo_loss_grad, LossConfig, RecordDump, TrainingRecord};

/// How to read a score: one plain gradient step of size η on the record's
/// loss changes the measure by about −η · score.
pub const INFLUENCE_SIGN_CONVENTION: &str =
    "score = <grad m, grad loss_i>; an SGD step of size eta on record i changes m by about -eta * score, \
     so negative scores mark records whose update raises m";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceScore {
    pub epoch: u64,
    pub t: u64,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    pub epoch: u64,
    pub measure: String,
    pub snapshot_id: String,
    pub measure_value: f64,
    pub sign_convention: String,
    pub scores: Vec<InfluenceScore>,
}

impl InfluenceReport {
    /// Indices of the `k` largest |score| entries, largest first.
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| {
            self.scores[b]
                .score
                .abs()
                .total_cmp(&self.scores[a].score.abs())
                .then(a.cmp(&b))
        });
        idx.truncate(k);
        idx
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,t,score\n");
        for s in &self.scores {
            out.push_str(&format!("{},{},{}\n", s.epoch, s.t, s.score));
        }
        out
    }
}

/// The records with the advantages the loss will use; with normalization on,
/// standardization spans the whole slice.
pub fn prepared_records(records: &[TrainingRecord], loss: &LossConfig) -> Vec<TrainingRecord> {
    let adv = effective_advantages(records, loss.normalize_advantages);
    records
        .iter()
        .zip(adv)
        .map(|(r, a)| TrainingRecord {
            advantage: a,
            ..r.clone()
        })
        .collect()
}

/// Iᵢ = ⟨∇m(θ), ∇ℓᵢ(θ)⟩ for every record of `dump`, where ℓᵢ is the PPO loss
/// of record i alone. `params` must be the snapshot that collected the records.
pub fn influence(
    dump: &RecordDump,
    measure: &BehaviorMeasure,
    params: &PolicyParams,
    loss: &LossConfig,
) -> Result<InfluenceReport> {
    let id = params.snapshot_id();
    if id != dump.snapshot_id {
        return Err(Error::Provenance {
            expected: dump.snapshot_id.clone(),
            actual: id,
        });
    }
    let (value, target) = measure.value_and_gradient(params)?;
    let single = LossConfig {
        normalize_advantages: false,
        ..*loss
    };
    let records = prepared_records(&dump.records, loss);
    let scores = records
        .par_iter()
        .map(|r| {
            let g = ppo_loss_grad(params, std::slice::from_ref(r), &single, false)?.grad;
            Ok(InfluenceScore {
                epoch: r.epoch,
                t: r.t,
                score: target.dot(&g),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InfluenceReport {
        epoch: dump.epoch,
        measure: measure.name.clone(),
        snapshot_id: dump.snapshot_id.clone(),
        measure_value: value,
        sign_convention: INFLUENCE_SIGN_CONVENTION.to_string(),
        scores,
    })
}
