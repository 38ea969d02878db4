//! On-policy PPO over batched highway environments.
//!
//! A run directory contains `config.json`, `metrics.csv`, `manifest.json`,
//! `checkpoints/ckpt_XXXX` (+ `.json` sidecars), `records/epoch_XXXX.json.gz`
//! with every epoch's training records, and `rollouts/epoch_XXXX.jsonl`
//! archives at the configured cadence.
//!
//! Records of epoch `k` are collected under `ckpt_k`; row `k` of the metrics
//! reports the episodes finished during that collection, the KL between
//! `ckpt_k` and `ckpt_{k+1}`, and measure values at `ckpt_{k+1}`.

mod config;
mod gae;
mod loss;
mod optim;
mod record;
mod trainer;

pub use config::{OptimizerMode, RewardMode, TrainerConfig};
pub use gae::compute_gae;
pub use loss::{effective_advantages, ppo_loss_grad, record_losses, LossConfig, LossOutput};
pub use optim::{clip_grad_norm, Optimizer};
pub use record::{RecordDump, TrainingRecord, RECORD_DUMP_VERSION};
pub use trainer::{read_metrics_csv, train, EpochMetrics, RunConfig, RunLayout, TrainOutcome, METRICS_COLUMNS};
