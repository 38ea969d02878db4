use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{RewardMode, TrainerConfig};
use super::gae::compute_gae;
use super::loss::ppo_loss_grad;
use super::optim::{clip_grad_norm, Optimizer};
use super::record::{RecordDump, TrainingRecord, RECORD_DUMP_VERSION};
use crate::archive::{ArchiveRecord, RolloutArchive};
use crate::env::{self, Action, EnvState, Observation, RewardBreakdown};
use crate::error::{Error, Result};
use crate::manifest::RunManifest;
use crate::measure::BehaviorMeasure;
use crate::policy::{sample, Checkpoint, PolicyParams};
use crate::rollout::{EpisodeStats, EpisodeSummary};
use crate::util::mix_seed;

pub const METRICS_COLUMNS: [&str; 8] = [
    "epoch",
    "timesteps",
    "mean_norm_return",
    "survival",
    "collision_comp",
    "speed_comp",
    "lane_comp",
    "kl",
];

/// File locations inside a run directory.
#[derive(Clone, Debug)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn diagnostic(&self) -> PathBuf {
        self.root.join("diagnostic.json")
    }

    /// `ckpt_0000` holds the initial parameters, `ckpt_{k+1}` those after epoch `k`.
    pub fn checkpoint(&self, index: u64) -> PathBuf {
        self.root.join("checkpoints").join(format!("ckpt_{index:04}"))
    }

    pub fn records(&self, epoch: u64) -> PathBuf {
        self.root.join("records").join(format!("epoch_{epoch:04}.json.gz"))
    }

    pub fn rollouts(&self, epoch: u64) -> PathBuf {
        self.root.join("rollouts").join(format!("epoch_{epoch:04}.jsonl"))
    }
}

/// Stored next to the metrics so a run can be re-created.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub measures: Vec<String>,
    pub trainer: TrainerConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u64,
    pub timesteps: u64,
    pub mean_norm_return: f64,
    pub survival: f64,
    pub collision_comp: f64,
    pub speed_comp: f64,
    pub lane_comp: f64,
    /// Empirical KL(π_before ‖ π_after) over the epoch's observations.
    pub kl: f64,
    /// Registered measures evaluated on the parameters after this epoch's update.
    pub measures: Vec<(String, f64)>,
    pub episodes: usize,
    pub mean_raw_return: f64,
    pub minibatch_steps: usize,
    pub early_stopped: bool,
}

impl EpochMetrics {
    pub fn csv_header(measure_names: &[String]) -> String {
        let mut cols: Vec<&str> = METRICS_COLUMNS.to_vec();
        cols.extend(measure_names.iter().map(String::as_str));
        cols.join(",")
    }

    /// Floats use the shortest representation that parses back to the same value.
    pub fn csv_row(&self) -> String {
        let mut row = format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.timesteps,
            self.mean_norm_return,
            self.survival,
            self.collision_comp,
            self.speed_comp,
            self.lane_comp,
            self.kl
        );
        for (_, v) in &self.measures {
            write!(row, ",{v}").unwrap();
        }
        row
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub layout: RunLayout,
    pub metrics: Vec<EpochMetrics>,
    pub final_params: PolicyParams,
    pub manifest: RunManifest,
}

/// Reads a metrics CSV back into (header, rows of fields).
pub fn read_metrics_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::format("metrics csv", "empty file"))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format("metrics csv", format!("row {}: {e}", i + 1)))?;
        if row.len() != header.len() {
            return Err(Error::format(
                "metrics csv",
                format!("row {} has {} fields", i + 1, row.len()),
            ));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

struct Worker {
    index: u64,
    episode: u64,
    state: EnvState,
    obs: Observation,
    rng: ChaCha8Rng,
    stats: EpisodeStats,
}

#[derive(Default)]
struct Segment {
    obs: Vec<Observation>,
    actions: Vec<usize>,
    log_probs: Vec<f64>,
    old_log_probs: Vec<Vec<f64>>,
    values: Vec<f64>,
    rewards: Vec<RewardBreakdown>,
    dones: Vec<bool>,
    last_value: f64,
    finished: Vec<EpisodeStats>,
}

impl Worker {
    fn new(seed: u64, index: u64, cfg: &TrainerConfig) -> Result<Self> {
        let (state, obs) = env::reset(mix_seed(seed, index, 0), &cfg.env)?;
        Ok(Worker {
            index,
            episode: 0,
            state,
            obs,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(seed, index, u64::MAX)),
            stats: EpisodeStats::default(),
        })
    }

    fn collect(&mut self, params: &PolicyParams, steps: usize, seed: u64, cfg: &TrainerConfig) -> Result<Segment> {
        let mut seg = Segment::default();
        for _ in 0..steps {
            let out = params.forward(&self.obs);
            let (a, logp) = sample(&out, &mut self.rng);
            let (next, tr) = env::step(&self.state, Action::from_id(a).expect("valid action id"))?;
            self.stats.push(&tr.reward);
            seg.obs.push(self.obs);
            seg.actions.push(a);
            seg.log_probs.push(logp);
            seg.old_log_probs.push(out.log_probs.clone());
            seg.values.push(out.value);
            seg.rewards.push(tr.reward);
            seg.dones.push(tr.done);
            if tr.done {
                seg.finished.push(std::mem::take(&mut self.stats));
                self.episode += 1;
                let (s, o) = env::reset(mix_seed(seed, self.index, self.episode), &cfg.env)?;
                self.state = s;
                self.obs = o;
            } else {
                self.state = next;
                self.obs = tr.observation;
            }
        }
        seg.last_value = params.forward(&self.obs).value;
        Ok(seg)
    }
}

/// Mean KL(p_old ‖ π_params) over `obs`, with `old` the stored log-probabilities.
fn batch_kl(params: &PolicyParams, obs: &[Observation], old: &[Vec<f64>]) -> f64 {
    let total: f64 = obs
        .iter()
        .zip(old)
        .map(|(o, lp_old)| {
            let new = params.forward(o);
            lp_old
                .iter()
                .zip(&new.log_probs)
                .map(|(a, b)| a.exp() * (a - b))
                .sum::<f64>()
        })
        .sum();
    total / obs.len() as f64
}

fn interpolate(from: &PolicyParams, to: &PolicyParams, frac: f64) -> Result<PolicyParams> {
    let values = from
        .values()
        .iter()
        .zip(to.values())
        .map(|(a, b)| a + frac * (b - a))
        .collect();
    from.with_values(values)
}

#[derive(Serialize)]
struct Diagnostic<'a> {
    epoch: u64,
    update_epoch: usize,
    minibatch: usize,
    loss: f64,
    policy_loss: f64,
    value_loss: f64,
    entropy: f64,
    grad_finite: bool,
    snapshot_id: &'a str,
    checkpoint: String,
}

/// Runs PPO and writes the run directory at `run_dir`.
pub fn train(cfg: &TrainerConfig, seed: u64, measures: &[BehaviorMeasure], run_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let names: Vec<String> = measures.iter().map(|m| m.name.clone()).collect();
    for (i, n) in names.iter().enumerate() {
        if n.is_empty() || n.contains(',') || METRICS_COLUMNS.contains(&n.as_str()) || names[..i].contains(n) {
            return Err(Error::Config(format!(
                "measure name `{n}` is empty, reserved, duplicated or contains a comma"
            )));
        }
    }
    let functionals = measures.iter().map(|m| m.functional()).collect::<Result<Vec<_>>>()?;

    let layout = RunLayout::new(run_dir);
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let run_config = RunConfig {
        seed,
        measures: names.clone(),
        trainer: cfg.clone(),
    };
    std::fs::write(layout.config(), serde_json::to_string_pretty(&run_config)? + "\n")
        .map_err(|e| Error::io(layout.config(), e))?;

    let config_hash = cfg.hash();
    let n_batch = cfg.batch_size();
    let loss_cfg = cfg.loss_config();

    let mut params = PolicyParams::init(cfg.network.clone(), seed)?;
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.adam_eps, params.len());
    let mut workers = (0..cfg.n_envs as u64)
        .map(|i| Worker::new(seed, i, cfg))
        .collect::<Result<Vec<_>>>()?;
    Checkpoint::new(params.clone(), seed, 0).save(&layout.checkpoint(0))?;
    let mut checkpoints = vec![layout.checkpoint(0)];

    let mut csv = EpochMetrics::csv_header(&names) + "\n";
    let mut metrics = Vec::new();

    for epoch in 0..cfg.epochs() {
        let snapshot = params.snapshot_id();
        let segments = workers
            .par_iter_mut()
            .map(|w| w.collect(&params, cfg.steps_per_env, seed, cfg))
            .collect::<Result<Vec<_>>>()?;

        let mut records = Vec::with_capacity(n_batch);
        let mut old_log_probs = Vec::with_capacity(n_batch);
        let mut finished = Vec::new();
        let mut archive = RolloutArchive::new(cfg.env.hash(), seed, snapshot.clone());
        let write_archive = cfg.archive_every > 0 && epoch % cfg.archive_every == 0;
        for (e, seg) in segments.into_iter().enumerate() {
            let train_rewards: Vec<f64> = seg
                .rewards
                .iter()
                .map(|r| match cfg.reward {
                    RewardMode::Normalized => r.normalized,
                    RewardMode::Raw => r.total,
                })
                .collect();
            let (adv, ret) = compute_gae(
                &train_rewards,
                &seg.values,
                &seg.dones,
                cfg.gamma,
                cfg.gae_lambda,
                seg.last_value,
            )?;
            for s in 0..seg.obs.len() {
                let t = (e * cfg.steps_per_env + s) as u64;
                records.push(TrainingRecord {
                    epoch,
                    t,
                    obs: seg.obs[s],
                    action: seg.actions[s],
                    reward: train_rewards[s],
                    log_prob_old: seg.log_probs[s],
                    value_old: seg.values[s],
                    advantage: adv[s],
                    return_to_go: ret[s],
                });
                if write_archive {
                    archive.records.push(ArchiveRecord {
                        epoch,
                        t,
                        obs: seg.obs[s],
                        action: seg.actions[s],
                        reward: seg.rewards[s],
                        done: seg.dones[s],
                    });
                }
            }
            old_log_probs.extend(seg.old_log_probs);
            finished.extend(seg.finished);
        }
        if write_archive {
            archive.write_jsonl(&layout.rollouts(epoch))?;
        }
        if cfg.dump_records {
            RecordDump {
                format_version: RECORD_DUMP_VERSION,
                epoch,
                snapshot_id: snapshot.clone(),
                config_hash: config_hash.clone(),
                seed,
                records: records.clone(),
            }
            .save(&layout.records(epoch))?;
        }

        // Update.
        let before = params.clone();
        let batch_obs: Vec<Observation> = records.iter().map(|r| r.obs).collect();
        let mut order: Vec<usize> = (0..records.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch, 1 << 40));
        let mut steps = 0;
        let mut early_stopped = false;
        'update: for update_epoch in 0..cfg.update_epochs {
            order.shuffle(&mut shuffle_rng);
            for (mb_index, chunk) in order.chunks(cfg.minibatch_size).enumerate() {
                let batch: Vec<TrainingRecord> = chunk.iter().map(|&i| records[i].clone()).collect();
                let out = ppo_loss_grad(&params, &batch, &loss_cfg, false)?;
                if !out.loss.is_finite() || !out.grad.is_finite() {
                    let path = layout.root.join("checkpoints").join("diverged");
                    Checkpoint::new(params.clone(), seed, epoch * n_batch as u64).save(&path)?;
                    let diag = Diagnostic {
                        epoch,
                        update_epoch,
                        minibatch: mb_index,
                        loss: out.loss,
                        policy_loss: out.policy_loss,
                        value_loss: out.value_loss,
                        entropy: out.entropy,
                        grad_finite: out.grad.is_finite(),
                        snapshot_id: &params.snapshot_id(),
                        checkpoint: path.display().to_string(),
                    };
                    let json = serde_json::to_string_pretty(&diag)?;
                    std::fs::write(layout.diagnostic(), json).map_err(|e| Error::io(layout.diagnostic(), e))?;
                    return Err(Error::Diverged(format!(
                        "non-finite loss at epoch {epoch}, pass {update_epoch}, minibatch {mb_index}; see {}",
                        layout.diagnostic().display()
                    )));
                }
                let mut grad = out.grad;
                clip_grad_norm(&mut grad, cfg.max_grad_norm);
                let mut next = optimizer.step(&params, &grad)?;
                steps += 1;
                if let Some(budget) = cfg.kl_budget {
                    if batch_kl(&next, &batch_obs, &old_log_probs) > budget {
                        let mut accepted = params.clone();
                        let mut frac = 0.5;
                        for _ in 0..30 {
                            let cand = interpolate(&params, &next, frac)?;
                            if batch_kl(&cand, &batch_obs, &old_log_probs) <= budget {
                                accepted = cand;
                                break;
                            }
                            frac *= 0.5;
                        }
                        next = accepted;
                        params = next;
                        early_stopped = true;
                        break 'update;
                    }
                }
                params = next;
            }
        }
        let kl = if params == before {
            0.0
        } else {
            batch_kl(&params, &batch_obs, &old_log_probs)
        };

        let timesteps = (epoch + 1) * n_batch as u64;
        Checkpoint::new(params.clone(), seed, timesteps).save(&layout.checkpoint(epoch + 1))?;
        checkpoints.push(layout.checkpoint(epoch + 1));

        let measure_values = functionals
            .iter()
            .zip(&names)
            .map(|(f, n)| Ok((n.clone(), f.evaluate(&params)?)))
            .collect::<Result<Vec<_>>>()?;
        let summary = EpisodeSummary::from_episodes(&finished, cfg.env.horizon);
        let m = EpochMetrics {
            epoch,
            timesteps,
            mean_norm_return: summary.mean_norm_return,
            survival: summary.survival,
            collision_comp: summary.collision_comp,
            speed_comp: summary.speed_comp,
            lane_comp: summary.lane_comp,
            kl,
            measures: measure_values,
            episodes: summary.episodes,
            mean_raw_return: summary.mean_raw_return,
            minibatch_steps: steps,
            early_stopped,
        };
        csv.push_str(&m.csv_row());
        csv.push('\n');
        std::fs::write(layout.metrics(), &csv).map_err(|e| Error::io(layout.metrics(), e))?;
        metrics.push(m);
    }

    let manifest = RunManifest::build(&layout.root, seed, serde_json::to_value(&run_config)?, &checkpoints)?;
    manifest.save(&layout.manifest())?;
    Ok(TrainOutcome {
        layout,
        metrics,
        final_params: params,
        manifest,
    })
}
